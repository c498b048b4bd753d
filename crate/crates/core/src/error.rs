use thiserror::Error;

/// Errors produced by construction, parsing, validation and certification.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("layer {layer}: {message}")]
    Layer { layer: usize, message: String },

    #[error("parse error: {0}")]
    Parse(String),

    #[error("expression error at column {column}: {message}")]
    Expression { column: usize, message: String },

    #[error("spec error at `{path}`: {message}")]
    Spec { path: String, message: String },

    #[error("hypothesis violated ({condition}): {message}")]
    Hypothesis { condition: String, message: String },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("resource limit exceeded: {0}")]
    ResourceLimit(String),

    #[error("io error: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn hypothesis(condition: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Hypothesis {
            condition: condition.into(),
            message: msg.into(),
        }
    }
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
