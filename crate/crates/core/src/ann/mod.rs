//! Dense ReLU regression network trained by mini-batch ADAM on the
//! mean-square error.
//!
//! The network takes the full vector of outcome frequencies as input and
//! produces a single linear output, the phase estimate.

mod mlp;
mod persist;
mod train;

pub use mlp::{backward, init_network, mse_cost, training_arrays, Gradients, Layer, MlpParams};
pub use persist::ModelFile;
pub use train::{train, train_until_crb, CostHistory, TrainConfig, TrainOutcome};
