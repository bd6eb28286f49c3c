use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape error: {0}")]
    Shape(String),
    #[error("checkpoint format error: {0}")]
    Checkpoint(String),
    #[error("loss mask selects no entries")]
    EmptyMask,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, DiffError>;

pub(crate) fn shape_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(DiffError::Shape(msg.into()))
}
