use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("invalid kinematic chain: {0}")]
    InvalidChain(String),
    #[error("target unreachable: distance {distance:.4} exceeds reach {reach:.4}")]
    Unreachable { distance: f64, reach: f64 },
    #[error("inverse kinematics did not converge after {iterations} iterations")]
    NoConvergence { iterations: usize },
    #[error("motion too short: {0} states, need at least 2")]
    MotionTooShort(usize),
    #[error("zero-length arm segment at frame {0}")]
    ZeroLengthSegment(usize),
    #[error("invalid prefix fractions: {0}")]
    InvalidFraction(String),
    #[error("degenerate mean hand direction (norm {0:.3e})")]
    DegenerateDirection(f64),
    #[error("malformed input: {0}")]
    MalformedInput(String),
    #[error("dataset must contain both real and generated entries")]
    SingleLabel,
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("checkpoint checksum mismatch")]
    Checksum,
    #[error("checkpoint shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{0} is in collision")]
    InCollision(String),
    #[error("planning failed: {0}")]
    PlanningFailed(String),
    #[error("length mismatch: {0} planned vs {1} reference motions")]
    LengthMismatch(usize, usize),
    #[error("{0}")]
    Missing(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: PathBuf,
        line: usize,
        msg: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than runtime failure.
    pub fn is_config_error(&self) -> bool {
        matches!(
            self,
            Error::InvalidConfig(_)
                | Error::InvalidChain(_)
                | Error::InCollision(_)
                | Error::Missing(_)
                | Error::Json { .. }
                | Error::Parse { .. }
                | Error::InvalidFraction(_)
        )
    }
}
