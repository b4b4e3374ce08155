use thiserror::Error;

use gazegest_tensornet::TensorError;

#[derive(Debug, Error)]
pub enum Error {
    #[error("no valid records in log ({skipped} malformed lines skipped)")]
    NoValidRecords { skipped: usize },
    #[error("{0}")]
    InvalidInput(String),
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("evaluation error: {0}")]
    Eval(String),
    #[error("benchmark error: {0}")]
    Bench(String),
    #[error(transparent)]
    Tensor(#[from] TensorError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidInput(msg.into())
}
