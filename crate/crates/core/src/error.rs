use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid space: {0}")]
    InvalidSpace(String),

    #[error("index {index} out of range for vector {vector} with {len} items")]
    IndexOutOfRange {
        vector: usize,
        index: usize,
        len: usize,
    },

    #[error("subsample count {count} exceeds pool size {len} for vector {vector}")]
    SubsampleTooLarge {
        vector: usize,
        count: usize,
        len: usize,
    },

    #[error("objective budget exhausted: requested {requested}, remaining {remaining}")]
    BudgetExhausted { requested: u64, remaining: u64 },

    #[error("candidate {0} already scored")]
    DuplicateCandidate(String),

    #[error("space of size {size} exceeds enumeration cap {cap}")]
    TooLargeToEnumerate { size: String, cap: u64 },

    #[error("external scorer timed out after {0:.1}s")]
    ScorerTimeout(f64),

    #[error("external scorer returned {got} scores for {expected} requests")]
    ScorerCountMismatch { expected: usize, got: usize },

    #[error("malformed scorer response line {line:?}: {reason}")]
    ScorerMalformed { line: String, reason: String },

    #[error("objective failed: {0}")]
    Objective(String),

    #[error("invalid model input: {0}")]
    Model(String),

    #[error("model has not been trained")]
    Untrained,

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("parse error in {path}: {reason}")]
    Parse { path: PathBuf, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn parse(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Parse {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// True for errors that stem from an unusable configuration rather than
    /// a failure while the experiment was running.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            Error::Config(_)
                | Error::InvalidSpace(_)
                | Error::SubsampleTooLarge { .. }
                | Error::TooLargeToEnumerate { .. }
                | Error::Parse { .. }
        )
    }

    pub fn is_budget(&self) -> bool {
        matches!(self, Error::BudgetExhausted { .. })
    }
}
