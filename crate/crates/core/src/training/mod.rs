//! Surrogate training: composite loss, two-phase optimization, cross
//! validation, hyperparameter search and test metrics.

pub mod fit;
pub mod loss;
pub mod metrics;
pub mod search;

pub use fit::{train, train_observed, train_split, HyperConfig, HyperRanges, TrainOutcome, TrainSchedule};
pub use loss::{loss, model_params, set_model_params, LossConfig};
pub use metrics::{evaluate, predict, trace_metrics, FitReport, HistoryEntry, Phase};
pub use search::{cross_validate, hyper_search, kfold_indices, kfold_split, CvResult, SearchResult, Trial};
