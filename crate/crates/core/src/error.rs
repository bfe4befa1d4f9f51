use thiserror::Error;

/// Errors raised by the numeric core.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("non-finite value produced by {0}")]
    NonFinite(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("graph: {0}")]
    Graph(String),
    #[error("divergence at step {step}: {reason}")]
    Divergence { step: usize, reason: String },
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("data: {0}")]
    Data(String),
    #[error("csv line {line}: {message}")]
    Csv { line: u64, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
