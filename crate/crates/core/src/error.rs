use thiserror::Error;

/// Errors produced by the tracking library.
#[derive(Debug, Error)]
pub enum Error {
    /// A covariance or extent matrix lost positive definiteness.
    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(&'static str),

    /// An assignment problem has no feasible solution.
    #[error("assignment problem is infeasible")]
    InfeasibleAssignment,

    /// The exhaustive association enumerator was called above its guard size.
    #[error("exhaustive enumeration guard exceeded: {got} measurements (max {max})")]
    EnumerationGuard { got: usize, max: usize },

    /// An operation requiring one tracker mode was called on the other.
    #[error("tracker mode mismatch: expected {expected}, got {got}")]
    ModeMismatch {
        expected: &'static str,
        got: &'static str,
    },

    /// Reduction removed every global hypothesis; pruning thresholds are too
    /// aggressive for the data.
    #[error("reduction emptied the global hypothesis set")]
    EmptyPosterior,

    /// A trajectory-set or scenario file failed to parse.
    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
