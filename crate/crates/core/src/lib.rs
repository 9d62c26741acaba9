//! Calibration of simulated quantum sensors by neural-network regression.
//!
//! The crate is organised bottom-up:
//!
//! * [`models`]: measurement likelihoods (single qubit, twin-Fock state),
//!   Fisher information, Cramér-Rao and standard-quantum-limit bounds and
//!   multinomial outcome sampling.
//! * [`data`]: phase grids, label priors and synthetic training sets.
//! * [`estimators`]: likelihood baselines (grid-search MLE, MAP, the closed
//!   form qubit MLE) and the Bayesian posterior on the grid.
//! * [`ann`]: a dense ReLU regression network trained with mini-batch ADAM.
//! * [`evaluation`]: frequentist bias/variance statistics, phase-averaged
//!   bounds, estimator distances and resolution thresholds.

// `!(x > 0.0)` style checks are meant to reject NaN as well
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod ann;
pub mod data;
pub mod error;
pub mod estimators;
pub mod evaluation;
pub mod models;
pub mod seed;

pub use error::{Error, Result};
