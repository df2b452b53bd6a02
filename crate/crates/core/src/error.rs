use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("value out of range: {0}")]
    Range(String),

    #[error("format error in {record}: {message}")]
    Format { record: String, message: String },

    #[error("protocol violation: {0}")]
    Protocol(String),

    #[error("non-finite value in {component}")]
    NonFinite { component: String },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(record: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Format {
            record: record.into(),
            message: message.into(),
        }
    }
}
