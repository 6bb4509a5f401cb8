//! Synthetic ground truth: parameter spaces, the circulation generator,
//! datasets and closed-form test systems.

pub mod analytic;
pub mod circulation;
pub mod dataset;
pub mod space;

pub use circulation::{benchmark_space, full_space, simulate_circulation, CirculationParams, CirculationRun};
pub use dataset::{generate_dataset, Dataset, GeneratorConfig, Split, TrainingSample};
pub use space::{ParameterEntry, ParameterSpace};
