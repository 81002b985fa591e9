//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An operation was handed tensors whose dimensions do not satisfy its
    /// contract. The message names the offending dimensions.
    #[error("{op}: shape mismatch: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    /// A non-shape precondition was violated (non-scalar loss, missing
    /// gradient, parameter out of range, ...).
    #[error("{op}: contract violation: {detail}")]
    Contract { op: &'static str, detail: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: checkpoint rejected: {detail}")]
    Checkpoint { path: PathBuf, detail: String },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: malformed dataset manifest: {detail}")]
    Manifest { path: PathBuf, detail: String },
}

impl Error {
    pub fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::ShapeMismatch {
            op,
            detail: detail.into(),
        }
    }

    pub fn contract(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Contract {
            op,
            detail: detail.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn checkpoint(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Checkpoint {
            path: path.into(),
            detail: detail.into(),
        }
    }

    pub fn manifest(path: impl Into<PathBuf>, detail: impl Into<String>) -> Self {
        Error::Manifest {
            path: path.into(),
            detail: detail.into(),
        }
    }
}
