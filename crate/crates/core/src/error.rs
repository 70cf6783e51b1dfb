//! Error types shared across the solver.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum SimError {
    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A linear solve failed (singular or structurally deficient system).
    #[error("solver failure: {0}")]
    SolverFailure(String),

    /// An operation was called in the wrong order (e.g. forces requested
    /// before any solve populated the multipliers).
    #[error("state error: {0}")]
    StateError(String),

    /// The plastic consistency equation could not be bracketed.
    #[error("consistency failure at sample point {point}: {detail}")]
    ConsistencyFailure { point: usize, detail: String },

    /// Configuration file could not be parsed or validated.
    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, SimError>;
