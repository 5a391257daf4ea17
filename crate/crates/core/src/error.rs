use thiserror::Error;

use crate::model::ValidationReport;

/// Errors surfaced by the planning toolkit.
#[derive(Debug, Error)]
pub enum PipsError {
    /// A model failed invariant checks; the report names each violation.
    #[error("invalid model:\n{0}")]
    InvalidModel(ValidationReport),

    /// A model file could not be decoded at all (JSON or declared shape).
    #[error("malformed model file: {0}")]
    Malformed(String),

    #[error("action {action} is not admissible at state {state}")]
    Inadmissible { state: usize, action: usize },

    #[error("state index {0} is out of range")]
    StateOutOfRange(usize),

    #[error("horizon mismatch: expected {expected}, got {got}")]
    HorizonMismatch { expected: usize, got: usize },

    #[error("policy switching requires at least one candidate")]
    EmptyCandidateSet,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    /// The exhaustive communicating check would enumerate too many policies.
    #[error("exhaustive check needs {needed} stationary policies but the cap is {cap}; use the sufficient mode instead")]
    ExhaustiveCapExceeded { needed: u128, cap: u128 },

    #[error("schedule refers to invalid state {0}")]
    InvalidSchedule(usize),

    #[error("{what} did not reach a fixed point within {limit} iterations")]
    NoFixedPoint { what: &'static str, limit: usize },
}

pub type Result<T> = std::result::Result<T, PipsError>;
