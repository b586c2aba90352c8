use thiserror::Error;

/// Errors surfaced by the library and the experiment harness.
#[derive(Debug, Error)]
pub enum VvboError {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two Hilbert vectors (or a vector and an operator) belong to different
    /// output grids and cannot be combined.
    #[error("grid mismatch: operands belong to different output grids")]
    GridMismatch,

    #[error("configuration error: {0}")]
    Config(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, VvboError>;

impl VvboError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        VvboError::InvalidInput(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        VvboError::Config(msg.into())
    }
}
