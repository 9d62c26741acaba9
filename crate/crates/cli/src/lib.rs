//! Config-driven experiment harness: generate training sets, train replicate
//! networks, evaluate estimators and emit per-figure CSV datasets.

pub mod commands;
pub mod config;
pub mod figures;
pub mod output;

pub use config::ExperimentConfig;
