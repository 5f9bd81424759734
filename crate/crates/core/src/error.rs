use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A caller-supplied parameter is outside its legal domain.
    #[error("invalid parameter: {0}")]
    Param(String),

    /// Array lengths or dimensions that must agree do not.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// Non-finite values or a degenerate quantity (zero-norm vector).
    #[error("numeric error: {0}")]
    Numeric(String),

    /// Run configuration failed validation; every offending field is listed.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    /// A binary or text file does not follow its expected layout.
    #[error("format error in {path}: {msg}")]
    Format { path: PathBuf, msg: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            msg: msg.into(),
        }
    }
}
