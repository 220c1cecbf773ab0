//! Shared error type for the whole toolkit.

use crate::planner::PlanSolution;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    /// Argument outside the mathematical domain of an operation (bad
    /// probability, negative covariance scale, non-finite input, ...).
    #[error("domain error: {0}")]
    Domain(String),

    /// Degrees of freedom too small for the requested quantile or bound.
    #[error("degenerate degrees of freedom: {0}")]
    DegenerateDof(String),

    /// Sample set fails the positive-definiteness requirement
    /// (smallest eigenvalue of the sample covariance <= 1e-12 x largest).
    #[error("degenerate sample set: {0}")]
    DegenerateSamples(String),

    /// A per-constraint risk left (0, 0.5) or a budget sum exceeded epsilon.
    #[error("risk outside admissible range: {0}")]
    RiskDomain(String),

    /// Incompatible matrix/vector shapes.
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    /// The big-M certificate could not be established over the stated box.
    #[error("big-M certificate failed: {0}")]
    Certificate(String),

    /// The optimization problem admits no feasible point.
    #[error("infeasible: {0}")]
    Infeasible(String),

    /// Branch-and-bound hit its node budget. The best incumbent found so
    /// far, if any, is attached so callers can decide whether to use it.
    #[error("node limit {limit} reached before optimality was proven")]
    NodeLimit {
        limit: usize,
        best: Option<Box<PlanSolution>>,
    },

    /// The backend solver failed to converge or returned unusable output.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// Malformed or inconsistent run configuration.
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
