use thiserror::Error;

pub type Result<T, E = PtdError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum PtdError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("dimensionality mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("decode error: {0}")]
    Decode(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("worker {worker} failed: {message}")]
    Worker { worker: u32, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl PtdError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        PtdError::InvalidInput(msg.into())
    }
}
