use thiserror::Error;

/// Errors raised across the surrogate pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("input shape mismatch: expected {expected}, got {got}")]
    InputShape { expected: usize, got: usize },

    #[error("parameter shape mismatch: expected {expected}, got {got}")]
    ParameterShape { expected: usize, got: usize },

    #[error("integration diverged at step {step}")]
    Divergence { step: usize },

    #[error("loss diverged on sample {sample}")]
    LossDivergence { sample: usize },

    #[error("dataset error: {0}")]
    Dataset(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("calibration failed: {0}")]
    Calibration(String),

    #[error("checkpoint format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
