use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("length mismatch: design expects {expected} observations, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("degenerate design: {0}")]
    DegenerateDesign(String),

    #[error("regressor matrix is rank deficient (rank {rank} < {cols} columns)")]
    RankDeficientRegressors { rank: usize, cols: usize },

    #[error("regressor matrix has {rows} rows, expected {expected}")]
    RegressorShape { rows: usize, expected: usize },

    #[error("covariance parameters outside the positive-definite region: {0}")]
    NotPositiveDefinite(String),

    #[error("invalid distribution parameters: {0}")]
    InvalidParams(String),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("empty stratum: {0}")]
    EmptyStratum(String),

    #[error("invalid indicator: {0}")]
    InvalidIndicator(String),

    #[error("chain too short: {len} post-burn-in draws, need at least {min}")]
    ChainTooShort { len: usize, min: usize },

    #[error("unknown parameter `{0}`")]
    UnknownParameter(String),

    #[error("model mismatch: {0}")]
    ModelMismatch(String),

    #[error("unbalanced design: {0}")]
    UnbalancedDesign(String),

    #[error("missing column `{0}`")]
    MissingColumn(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: u64, message: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },
}

impl Error {
    /// Validation errors are caused by bad input; everything else is a runtime failure.
    pub fn is_validation(&self) -> bool {
        !matches!(self, Error::Io { .. } | Error::DegenerateData(_))
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
