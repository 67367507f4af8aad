//! Crate-wide error type.

use crate::scores::TaskKind;

/// Errors produced by calibration, tuning, and harness operations.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("alpha must lie strictly inside (0, 1), got {0}")]
    InvalidAlpha(f64),
    #[error("invalid rational alpha {num}/{den}: need 0 < num < den")]
    InvalidRationalAlpha { num: u64, den: u64 },
    #[error("cannot parse alpha from {0:?}: expected a decimal or \"num/den\"")]
    AlphaParse(String),
    #[error("empty {0} set")]
    EmptySet(&'static str),
    #[error("calibration scores must all be finite")]
    NonFiniteScore,
    #[error("non-positive prior scale")]
    NonPositivePriorScale,
    #[error("candidate parameter {key:?}: {problem}")]
    BadCandidateParam { key: String, problem: String },
    #[error("candidate kind {candidate:?} does not match task kind {task:?}")]
    KindMismatch { candidate: TaskKind, task: TaskKind },
    #[error("rule was calibrated for candidate {rule:?} but model is {model:?}")]
    CandidateMismatch { rule: String, model: String },
    #[error("{0}")]
    InvalidTask(String),
    #[error("threshold grid must be non-empty")]
    EmptyGrid,
    #[error("score file schema: {0}")]
    Schema(String),
    #[error("{0}")]
    InvalidConfig(String),
    #[error("split {0} would be empty; enlarge the budget or its fraction")]
    EmptySplit(&'static str),
    #[error("split fractions must be positive and sum to at most 1")]
    BadSplitRatios,
    #[error("DCO_WORKERS must be a positive integer, got {0:?}")]
    InvalidWorkerCount(String),
    #[error("worker pool: {0}")]
    ThreadPool(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
