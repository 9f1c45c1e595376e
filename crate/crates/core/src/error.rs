use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value is missing, malformed or violates a constraint.
    #[error("configuration error in `{key}`: {message}")]
    Config { key: String, message: String },

    /// A configuration file could not be parsed.
    #[error("failed to parse configuration: {0}")]
    Parse(String),

    /// An operation was called in a state that does not allow it.
    #[error("usage error: {0}")]
    Usage(String),

    /// A search space exceeded its configured cap.
    #[error("joint action space of size {size} exceeds the cap of {cap}")]
    Capacity { size: u128, cap: u128 },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: PathBuf, message: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn config(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn usage(message: impl Into<String>) -> Self {
        Error::Usage(message.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code used by the command line front end.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config { .. } | Error::Parse(_) => 2,
            Error::Capacity { .. } => 3,
            _ => 1,
        }
    }
}
