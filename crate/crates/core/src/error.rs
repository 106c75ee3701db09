use thiserror::Error;

use crate::types::DenseVector;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("non-finite value at position {index}")]
    NonFinite { index: usize },

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The inner solver hit its iteration cap. `best` is the lowest-objective
    /// iterate seen, still supported on the requested set.
    #[error("restricted solve did not converge after {iterations} iterations (|grad|_inf = {grad_norm:e})")]
    NonConvergence {
        iterations: usize,
        grad_norm: f64,
        best: DenseVector,
    },

    #[error("column {0} has zero norm; closed-form line minimization is undefined")]
    ZeroCurvatureColumn(usize),

    #[error("no candidate feature left outside the support")]
    NoCandidate,

    #[error("threshold rule does not match the goodness measure: {0}")]
    MismatchedRule(&'static str),

    #[error("f-measure undefined when both sets are empty")]
    BothEmpty,

    #[error("relative error undefined for a zero reference vector")]
    ZeroTruth,

    #[error("enumeration guard exceeded: {count} > {limit}")]
    GuardViolation { count: f64, limit: f64 },

    #[error("feature {0} has no group")]
    UnmappedFeature(usize),

    #[error("malformed line {line_no}: {reason}")]
    MalformedLine { line_no: usize, reason: String },

    #[error("line {line_no}: feature index {index} exceeds declared dimension {dim}")]
    IndexOutOfDeclaredRange {
        line_no: usize,
        index: usize,
        dim: usize,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
