use thiserror::Error;

use crate::exterior::Frame;

/// Position-tagged failure from the expression parser.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("parse error at position {position}: expected {expected}, found {found}")]
pub struct ParseError {
    /// Byte offset into the source text.
    pub position: usize,
    pub expected: String,
    pub found: String,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("forms live in different coframes ({0:?} vs {1:?})")]
    FrameMismatch(Frame, Frame),
    #[error("degree {0} exceeds the dimension 6")]
    DegreeOverflow(usize),
    #[error("cannot contract a 0-form")]
    DegreeUnderflow,
    #[error("degree mismatch: expected {expected}, got {got}")]
    DegreeMismatch { expected: usize, got: usize },
    #[error(
        "coefficient vector of length {got} does not match degree {degree} (needs {expected})"
    )]
    CoefficientLength {
        degree: usize,
        expected: usize,
        got: usize,
    },
    #[error("multi-index {0:?} is not strictly increasing in 0..6")]
    InvalidMultiIndex(Vec<usize>),
    #[error("metric is not symmetric positive definite")]
    DegenerateMetric,
    #[error("volume form vanishes")]
    DegenerateVolume,
    #[error("S^2 is not proportional to the identity (relative residual {0:e})")]
    NotProportional(f64),
    #[error("3-form is not stable: P = {0}")]
    NotStable(f64),
    #[error("2-form is degenerate (omega^3 = 0)")]
    DegenerateSymplectic,
    #[error("Lefschetz system is numerically singular (condition number {0:e})")]
    SingularSystem(f64),
    #[error("structure is not a valid SU(3)-structure: {0}")]
    InvalidStructure(String),
    #[error(transparent)]
    Parse(#[from] ParseError),
    #[error("unbound variable `{0}`")]
    UnboundVariable(String),
    #[error("operation not supported on the {0} model")]
    UnsupportedModel(&'static str),
    #[error("form is not in the span of the invariant basis (residual {0:e})")]
    NotInvariant(f64),
    #[error("profile is not admissible: {reason}")]
    AdmissibilityFailure {
        reason: String,
        first_violation_t: Option<f64>,
    },
    #[error("SU(3) validation failed at t = {t}: {check} (residual {residual:e})")]
    ValidationFailure {
        t: f64,
        check: String,
        residual: f64,
    },
    #[error("{0} is not 1-periodic in its coordinate")]
    PeriodicityViolation(String),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("ODE integration failed after t = {last_t}: {reason}")]
    OdeFailure { last_t: f64, reason: String },
    #[error("malformed JSON: {0}")]
    Json(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
