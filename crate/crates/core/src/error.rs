use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum FmfError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("singular time: {0}")]
    SingularTime(String),

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("capacity exceeded: {0}")]
    Capacity(String),

    #[error("format error: {0}")]
    Format(String),

    #[error("config error in `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FmfError {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        FmfError::Shape(msg.into())
    }

    pub(crate) fn param(msg: impl Into<String>) -> Self {
        FmfError::InvalidParam(msg.into())
    }

    pub(crate) fn numerical(msg: impl Into<String>) -> Self {
        FmfError::Numerical(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        FmfError::Format(msg.into())
    }

    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        FmfError::Config {
            field: field.into(),
            message: message.into(),
        }
    }
}

pub type Result<T> = std::result::Result<T, FmfError>;
