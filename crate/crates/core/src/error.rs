use std::io;
use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    /// Wrong magic, unsupported version or otherwise unrecognized layout.
    #[error("format error: {0}")]
    Format(String),

    /// The file is recognizable but its payload is damaged (e.g. truncated).
    #[error("corrupt data: {0}")]
    Corrupt(String),

    /// Data violates a domain invariant.
    #[error("validation error: {0}")]
    Validation(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("index build error: {0}")]
    Build(String),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
