//! Latent neural ODE surrogates of four-chamber cardiac pressure-volume
//! dynamics, with the machinery to train them, run variance-based
//! sensitivity analysis on them and calibrate their parameters.

pub mod calibration;
pub mod checkpoint;
pub mod error;
pub mod gsa;
pub mod lnode;
pub mod lowdisc;
pub mod nn;
pub mod optim;
pub mod refmodel;
pub mod rng;
pub mod training;

pub use checkpoint::Checkpoint;
pub use error::{Error, Result};
pub use lnode::{integrate, periodic_inputs, CycleContext, LnodeModel, StateNormalization, Trajectory, VectorField};
pub use nn::{count_params, AnnArchitecture, AnnWeights};
pub use refmodel::{Dataset, ParameterEntry, ParameterSpace, TrainingSample};
