//! Error type shared across the crate.

use std::path::PathBuf;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A precondition on an operation's inputs was violated.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    /// Malformed or truncated container file.
    #[error("malformed file: {0}")]
    Format(String),

    /// Geometry too degenerate to fit (collinear points, rank deficiency).
    #[error("degenerate configuration: {0}")]
    Degenerate(String),

    /// Not enough features/correspondences survived to estimate a model.
    #[error("insufficient correspondences: {0}")]
    InsufficientCorrespondences(String),

    /// Iterative solver failed to make progress.
    #[error("solver diverged: {0}")]
    Divergence(String),

    /// Wraps a failure with the pipeline stage it occurred in.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    /// Tag an error with the stage name it surfaced in.
    pub fn in_stage(self, stage: &'static str) -> Self {
        Error::Stage {
            stage,
            source: Box::new(self),
        }
    }
}
