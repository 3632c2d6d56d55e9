//! Crate-wide error type.
//!
//! Every fallible operation returns [`Result`]. The variants map onto the
//! distinct CLI exit codes, so the kind of failure survives all the way to
//! the shell.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Tensor/kernel shapes do not line up.
    #[error("dimension error: {0}")]
    Dimension(String),

    /// A scalar argument is outside its documented range.
    #[error("argument error: {0}")]
    Argument(String),

    /// A configuration value or combination is invalid.
    #[error("config error: {0}")]
    Config(String),

    /// Input data violates a documented invariant (manifest records, labels).
    #[error("validation error: {0}")]
    Validation(String),

    /// An operation was called before the state it needs exists.
    #[error("state error: {0}")]
    State(String),

    /// A NaN or infinity appeared where all values must be finite.
    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// Checkpoint or score file is malformed.
    #[error("format error in {path}: {reason}")]
    Format { path: String, reason: String },
}

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the CLI for this error kind.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Dimension(_) | Error::Argument(_) => 3,
            Error::Config(_) => 4,
            Error::Validation(_) => 5,
            Error::Io { .. } | Error::Format { .. } => 6,
            Error::State(_) | Error::NonFinite(_) => 7,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
