use std::path::PathBuf;

use crate::llm::BackendError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    /// A fact or anchor points at an id that is not declared.
    #[error("referential integrity: {0}")]
    Integrity(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown entity {0}")]
    UnknownEntity(u64),

    #[error("numerical failure: {0}")]
    Numeric(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Backend(#[from] BackendError),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn parse(path: impl Into<PathBuf>, line: usize, message: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            line,
            message: message.into(),
        }
    }

    /// Process exit code for the CLI: 1 for bad input, 2 for runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io { .. }
            | Error::Parse { .. }
            | Error::Integrity(_)
            | Error::InvalidArgument(_)
            | Error::UnknownEntity(_)
            | Error::Config(_)
            | Error::Json(_) => 1,
            Error::Numeric(_) | Error::Backend(_) => 2,
        }
    }
}
