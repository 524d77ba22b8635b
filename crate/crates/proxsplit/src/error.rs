//! Error type shared across the toolkit.

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("block layouts differ: {context}")]
    BlockMismatch { context: String },

    #[error("matrix is not symmetric (relative asymmetry {deviation:.3e})")]
    NotSymmetric { deviation: f64 },

    #[error(
        "matrix is not positive semi-definite (min eigenvalue {min_eig:.3e}, max {max_eig:.3e})"
    )]
    NotPsd { min_eig: f64, max_eig: f64 },

    #[error("step size must be positive, got {value}")]
    NonPositiveStep { value: f64 },

    #[error("step size {value} outside the admissible range {range}")]
    StepOutOfRange { value: f64, range: String },

    #[error("step bound violated: {detail}")]
    StepBoundViolated { detail: String },

    #[error("relaxation parameter {value} outside [0, {max}]")]
    ThetaOutOfRange { value: f64, max: f64 },

    #[error("relaxation 2 (Peaceman-Rachford) requires both operators strongly monotone")]
    PeacemanRachfordRequiresStrongMonotonicity,

    #[error("invalid regularity constant: {detail}")]
    InvalidRegularity { detail: String },

    #[error("invalid relaxation schedule: {detail}")]
    InvalidSchedule { detail: String },

    #[error("empty vector")]
    EmptyVector,

    #[error("linear solve failed: {context}")]
    SolveFailure { context: String },

    #[error("inconsistent dimensions: {context}")]
    InconsistentDimensions { context: String },

    #[error("insufficient data: need at least {needed} rows, got {got}")]
    InsufficientData { needed: usize, got: usize },

    #[error("parse error at row {row}, column {col}: {detail}")]
    ParseError {
        row: usize,
        col: usize,
        detail: String,
    },

    #[error("reference oracle disagreement: {detail}")]
    OracleDisagreement { detail: String },

    #[error("empirical rate unavailable: {detail}")]
    RateUnavailable { detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}
