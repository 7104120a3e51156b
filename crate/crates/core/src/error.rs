use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the simulation engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("index out of range: {what} {index} (len {len})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        len: usize,
    },

    #[error("confidence width is undefined for n = 0")]
    UndefinedWidth,

    #[error("weight is undefined for p_hat = {0}; such cells must take the cutoff branch")]
    GuardViolation(f64),

    #[error("search space N^K = {size} exceeds the brute-force budget of {budget} evaluations (N = {n}, K = {k})")]
    BudgetExceeded {
        size: u128,
        budget: u64,
        n: usize,
        k: usize,
    },

    #[error("Pareto frontier grew to {size} points, above the cap of {cap}")]
    FrontierTooLarge { size: usize, cap: usize },

    #[error("exact enumeration refused for K = {k} (limit {limit})")]
    TooManyExperts { k: usize, limit: usize },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {message}")]
    Format { path: PathBuf, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
