use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the detection pipeline.
#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value violates one of its documented constraints.
    #[error("invalid configuration: {0}")]
    Config(String),

    /// Array shapes disagree with the contract of the called operation.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A lattice or pixel index lies outside its valid range.
    #[error("index out of range: {0}")]
    Index(String),

    /// A required input collection was empty.
    #[error("empty input: {0}")]
    Empty(String),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    /// Malformed manifest, checkpoint or report content.
    #[error("format error: {0}")]
    Format(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at step {step}: {detail}")]
    Diverged { step: u64, detail: String },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
