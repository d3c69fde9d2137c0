use thiserror::Error;

/// Errors produced by tensor ops, transforms, and I/O.
#[derive(Debug, Error)]
pub enum CoreError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("metric undefined: {0}")]
    Undefined(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("bad file format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CoreError {
    pub fn shape(msg: impl Into<String>) -> Self {
        CoreError::Shape(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, CoreError>;
