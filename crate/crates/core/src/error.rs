use thiserror::Error;

/// Errors produced by the estimator toolkit.
///
/// The three user-facing categories map onto the CLI exit codes:
/// invalid input (1), numerical failure (2), infeasible target (3).
#[derive(Debug, Clone, Error)]
pub enum Error {
    /// Precondition or validation failure on caller-supplied data.
    #[error("invalid input: {0}")]
    Invalid(String),

    /// A factorization or solve failed, or a residual check was violated.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// The optimizer ran out of iterations before meeting its tolerance.
    /// Carries the best iterate found so callers can inspect or reuse it.
    #[error("solver stalled after {iterations} iterations (best variance {best_variance:e})")]
    Stalled {
        iterations: usize,
        best_m: Vec<f64>,
        best_variance: f64,
    },

    /// No admissible configuration can reach the requested target.
    #[error("infeasible: {0}")]
    Infeasible(String),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::Invalid(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        Error::Numerical(msg.into())
    }

    pub fn infeasible(msg: impl Into<String>) -> Self {
        Error::Infeasible(msg.into())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
