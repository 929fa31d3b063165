use std::path::Path;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum FedglError {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("numeric error: {0}")]
    Numeric(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

impl FedglError {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        FedglError::Validation(msg.into())
    }

    pub(crate) fn parse(path: &Path, line: usize, message: impl Into<String>) -> Self {
        FedglError::Parse {
            path: path.display().to_string(),
            line,
            message: message.into(),
        }
    }

    pub(crate) fn io(path: &Path, source: std::io::Error) -> Self {
        FedglError::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, FedglError>;
