//! Parameter estimation against observed traces: MAP by adjoint gradients and
//! L-BFGS, then NUTS sampling under a Gaussian-process error model.

pub mod chain;
pub mod gp;
pub mod map;
pub mod nuts;
pub mod posterior;
pub mod problem;

pub use chain::{sample_posterior, ParameterSummary, PosteriorChain, PosteriorSummary};
pub use gp::{fit_gp_error, fit_gp_error_with, residual_traces, GpErrorModel, GpFitConfig, ResidualTrace};
pub use map::{map_estimate, BoxMap, MapConfig, MapResult, StartLog};
pub use nuts::{gelman_rubin, nuts_sample, NutsConfig, NutsOutput, SplitRhat};
pub use posterior::{log_posterior, Posterior, PriorBox, PRIOR_HALF_WIDTH};
pub use problem::{mean_square, normalized_misfit, CalibrationProblem, FreeParameter, ProblemFile, ProblemSetup};
