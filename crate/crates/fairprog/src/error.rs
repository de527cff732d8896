//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor shapes incompatible with the requested operation.
    #[error("shape mismatch in {op}: {details}")]
    ShapeMismatch { op: String, details: String },

    /// A precondition on argument values failed.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Attempted to mutate the parameters of a frozen model.
    #[error("model is frozen: {0}")]
    FrozenModel(String),

    /// A data file failed to parse.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// A serialized record (model, trigger, manifest) failed to decode.
    #[error("decode error in {path}: {message}")]
    Decode { path: String, message: String },

    /// Run configuration rejected before any compute.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn shape(op: &str, details: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op: op.to_string(),
            details: details.into(),
        }
    }

    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}
