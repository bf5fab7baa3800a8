use thiserror::Error;

#[derive(Debug, Error)]
pub enum UccError {
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("empty bag")]
    EmptyBag,
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("problem size {size} exceeds cap {cap}")]
    Size { size: usize, cap: usize },
    #[error("format error at byte {offset}: {msg}")]
    Format { offset: usize, msg: String },
    #[error("training diverged at iteration {iteration} (loss {loss})")]
    Diverged { iteration: usize, loss: f64 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, UccError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(UccError::Shape(msg.into()))
}

pub(crate) fn contract_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(UccError::Contract(msg.into()))
}
