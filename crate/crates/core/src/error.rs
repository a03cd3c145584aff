//! Crate-wide error type.

use std::path::PathBuf;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// A parameter failed validation. `field` names the offending knob.
    #[error("invalid `{field}`: {message}")]
    InvalidParam { field: String, message: String },

    /// A data or config file could not be parsed. `line` is 1-based and
    /// counts every line of the file, header included.
    #[error("{}:{line}: {message}", path.display())]
    FileFormat {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    /// A precondition on operation inputs was violated.
    #[error("{0}")]
    InvalidInput(String),

    #[error("training diverged (non-finite loss) at epoch {epoch}, batch {batch}")]
    TrainingDiverged { epoch: usize, batch: usize },

    /// Pipeline-stage wrapper so CLI failures name the stage that broke.
    #[error("stage `{stage}`: {source}")]
    Stage {
        stage: &'static str,
        #[source]
        source: Box<Error>,
    },

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn invalid_param(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::InvalidParam {
            field: field.into(),
            message: message.into(),
        }
    }

    pub fn in_stage(stage: &'static str) -> impl FnOnce(Error) -> Error {
        move |source| Error::Stage {
            stage,
            source: Box::new(source),
        }
    }

    pub fn io(path: impl Into<PathBuf>) -> impl FnOnce(std::io::Error) -> Error {
        move |source| Error::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
