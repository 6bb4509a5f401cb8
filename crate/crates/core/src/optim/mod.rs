//! Gradient-based optimizers.

pub mod adam;
pub mod lbfgs;

pub use adam::{Adam, AdamConfig};
pub use lbfgs::{minimize, LbfgsConfig, LbfgsResult, Objective, Termination};
