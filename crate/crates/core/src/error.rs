use std::path::PathBuf;

use crate::domain::LoadCase;

/// Errors produced anywhere in the calibration pipeline.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("parameter {index} out of bounds: {value} not in [{lower}, {upper}]")]
    BoundsViolation {
        index: usize,
        value: f64,
        lower: f64,
        upper: f64,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("config {0} does not cover the full load grid")]
    IncompleteConfig(u64),

    #[error("shape mismatch: expected {expected}, got {actual}")]
    Shape { expected: String, actual: String },

    #[error("operation requires a frozen network")]
    FrozenRequired,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("load grid mismatch: {0}")]
    GridMismatch(String),

    #[error("target RoM is constant within load case {0}; R² is undefined")]
    DegenerateVariance(LoadCase),

    #[error("dataset missing: {}", .0.display())]
    DatasetMissing(PathBuf),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{}: {message}", path.display())]
    Format { path: PathBuf, message: String },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, message: impl ToString) -> Self {
        Error::Format {
            path: path.into(),
            message: message.to_string(),
        }
    }
}
