use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("time {0} outside [0,1]")]
    TimeOutOfRange(f64),

    #[error("index out of range: {what} = {index}, limit {limit}")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        limit: usize,
    },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("t = {t} outside evaluation interval [{lo}, {hi}]")]
    OutsideEvaluationInterval { t: f64, lo: f64, hi: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("quadrature did not converge: {0}")]
    Quadrature(String),

    #[error("non-finite objective at iteration {iteration}: {value}")]
    NonFiniteObjective { iteration: usize, value: f64 },

    #[error("matrix is rank deficient: {0}")]
    RankDeficient(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("empty group: {0}")]
    EmptyGroup(String),

    #[error("all candidate ranks failed to fit")]
    AllCandidatesFailed,

    #[error("envelope violation: rate {rate} exceeds envelope {envelope} at t = {t}")]
    EnvelopeViolation { rate: f64, envelope: f64, t: f64 },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
