use alloc::string::String;

/// Errors raised by the estimators, problems and outer loop.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("parameter vector must have at least one entry")]
    EmptyVector,
    #[error("non-finite value at index {index}")]
    NonFinite { index: usize },
    #[error("inner GD produced a non-finite state at step {step}")]
    NonFiniteState { step: usize },
    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("task distribution has no tasks")]
    EmptyDistribution,
    #[error("task probabilities sum to {sum}, expected 1")]
    ProbabilityMismatch { sum: f64 },
    #[error("degenerate problem: {0}")]
    DegenerateProblem(String),
    #[error("checkpoint count {count} must lie in 1..={r}")]
    InvalidCheckpointCount { count: usize, r: usize },
    #[error("rate check requires the inverse square-root schedule")]
    ScheduleMismatch,
    #[error("objective is non-finite near the evaluation point")]
    NonFiniteEvaluation,
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
