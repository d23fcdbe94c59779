use thiserror::Error;

#[derive(Debug, Error)]
pub enum DustError {
    #[error("invalid argument: {0}")]
    Argument(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("precondition violated: {0}")]
    Precondition(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("structure error: {0}")]
    Structure(String),
    #[error("bound undefined: {0}")]
    BoundUndefined(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, DustError>;

pub(crate) fn arg<T>(msg: impl Into<String>) -> Result<T> {
    Err(DustError::Argument(msg.into()))
}

pub(crate) fn dim<T>(msg: impl Into<String>) -> Result<T> {
    Err(DustError::Dimension(msg.into()))
}
