use thiserror::Error;

use crate::schedule::Violation;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid schedule: {}", join_violations(.0))]
    InvalidSchedule(Vec<Violation>),

    #[error("dimension mismatch: expected {expected} layers, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("size mismatch: {left} != {right}")]
    SizeMismatch { left: usize, right: usize },

    #[error("layer {layer} out of range 1..={num_layers}")]
    LayerOutOfRange { layer: usize, num_layers: usize },

    #[error("invalid model dims: {0}")]
    InvalidDims(String),

    #[error("invalid trace: {0}")]
    InvalidTrace(String),

    #[error("invalid oracle: {0}")]
    InvalidOracle(String),

    #[error("invalid config: {0}")]
    InvalidConfig(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("need at least {needed} observations, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("non-finite value {value} at x = {x}")]
    NonFinite { x: f64, value: f64 },

    #[error("empty search domain [{lo}, {hi}]")]
    EmptyDomain { lo: f64, hi: f64 },

    #[error("target {target} outside achievable range [{min}, {max}]")]
    OutOfRange { target: f64, min: f64, max: f64 },

    #[error("rate {rate} exceeds previous layer rate {previous}")]
    ConstraintViolation { rate: f64, previous: f64 },

    #[error("cannot keep {requested} tokens out of {available}")]
    TooManyTokens { requested: usize, available: usize },

    #[error("enumeration needs {count} schedules, limit is {limit}")]
    EnumerationBudget { count: u128, limit: u128 },

    #[error("evaluator failed at layer {layer}: {source}")]
    Evaluator {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("gaussian process kernel matrix is not positive definite")]
    NotPositiveDefinite,

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

fn join_violations(v: &[Violation]) -> String {
    v.iter()
        .map(|x| x.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
