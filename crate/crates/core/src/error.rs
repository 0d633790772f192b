use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid architecture: {0}")]
    InvalidArchitecture(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// The decomposition hit a degenerate configuration it could not resolve by perturbation.
    #[error("degenerate decomposition after {attempts} attempts: {reason}")]
    Degenerate { attempts: u32, reason: String },

    #[error("point ({x}, {y}) could not be assigned to a face")]
    FaceNotFound { x: f64, y: f64 },

    #[error("boundary of boundary is nonzero for cell {0}")]
    ChainCondition(usize),

    #[error("persistence and union-find oracle disagree at step {step} (dim {dim}): {matrix} vs {oracle}")]
    OracleMismatch {
        step: usize,
        dim: usize,
        matrix: usize,
        oracle: usize,
    },

    #[error("spectral failure: {0}")]
    Spectral(String),

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

    #[error("{path}: {message}")]
    Parse { path: PathBuf, message: String },
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
}
