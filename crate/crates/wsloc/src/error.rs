use std::path::PathBuf;

use thiserror::Error;

/// Crate-wide error type.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid box [{x_min}, {y_min}, {x_max}, {y_max}] conf {confidence}: {reason}")]
    InvalidBox {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        confidence: f64,
        reason: &'static str,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("class registry error: {0}")]
    Registry(String),

    #[error("unknown class {0:?}")]
    UnknownClass(String),

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("missing caption for clip {0:?}")]
    MissingCaption(String),

    #[error("box [{x_min}, {y_min}, {x_max}, {y_max}] exceeds image bounds {width}x{height}")]
    OutOfBounds {
        x_min: f64,
        y_min: f64,
        x_max: f64,
        y_max: f64,
        width: u32,
        height: u32,
    },

    #[error("integrity error in {context}: digest mismatch (expected {expected}, found {actual})")]
    DigestMismatch {
        context: String,
        expected: String,
        actual: String,
    },

    #[error("stale detections for round {round}: trained on digest {declared}, expected {expected}")]
    StaleDetections {
        round: u32,
        declared: String,
        expected: String,
    },

    #[error("{0}")]
    Pipeline(String),

    #[error("evaluation error: {0}")]
    Eval(String),

    #[error("training error: {0}")]
    Training(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Coarse classification used by the command-line frontend to pick
    /// exit codes: input/validation problems vs pipeline-state problems.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::InvalidBox { .. }
                | Error::InvalidConfig(_)
                | Error::Registry(_)
                | Error::UnknownClass(_)
                | Error::Parse { .. }
                | Error::MissingCaption(_)
                | Error::OutOfBounds { .. }
                | Error::Eval(_)
                | Error::Io { .. }
        )
    }

    pub fn is_pipeline_state(&self) -> bool {
        matches!(
            self,
            Error::DigestMismatch { .. } | Error::StaleDetections { .. } | Error::Pipeline(_)
        )
    }
}

pub type Result<T> = std::result::Result<T, Error>;
