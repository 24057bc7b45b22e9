//! Error type shared by every stage of the tracker.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on the arguments of an operation was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// A classifier could not be trained on the supplied samples.
    #[error("training failed: {0}")]
    Training(String),

    /// A model file carries a `format_version` this build does not understand.
    #[error("{path}: unsupported model format version {found} (expected {expected})")]
    ModelVersion {
        path: PathBuf,
        found: u64,
        expected: u64,
    },

    /// A model file could not be decoded.
    #[error("{path}: malformed model file: {reason}")]
    ModelFormat { path: PathBuf, reason: String },

    /// A JSON Lines record could not be parsed or failed validation.
    #[error("{path}:{line}: {reason}")]
    Record {
        path: PathBuf,
        line: usize,
        reason: String,
    },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
