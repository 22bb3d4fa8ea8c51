use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch on {dim}: {detail}")]
    Shape {
        op: &'static str,
        dim: String,
        detail: String,
    },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("config line {line}: {msg}")]
    ConfigLine { line: usize, msg: String },

    #[error("{format} decode error at byte {offset}: {msg}")]
    Decode {
        format: &'static str,
        offset: usize,
        msg: String,
    },

    #[error("unsupported format: {0}")]
    Unsupported(String),

    #[error("dataset error in {path}: {msg}")]
    Dataset { path: PathBuf, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("manifest mismatch: {0}")]
    ManifestMismatch(String),

    #[error("non-finite value in {what}")]
    NonFinite { what: String },

    #[error("autodiff: {0}")]
    Autodiff(String),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub(crate) fn shape(op: &'static str, dim: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            dim: dim.into(),
            detail: detail.into(),
        }
    }

    pub(crate) fn io(context: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            context: context.into(),
            source,
        }
    }
}
