use thiserror::Error;

/// Errors surfaced by the numerical kernels and solvers.
#[derive(Debug, Error)]
pub enum NkError {
    #[error("matrix is not positive definite (pivot {pivot:.3e} at index {index} below threshold {threshold:.3e})")]
    NotPositiveDefinite {
        pivot: f64,
        index: usize,
        threshold: f64,
    },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("field length mismatch: grid has {expected} nodes, field has {got}")]
    LengthMismatch { expected: usize, got: usize },

    #[error("missing fixed data: {0}")]
    MissingFixedData(&'static str),

    #[error("unsupported problem kind for this operation: {0}")]
    UnsupportedKind(&'static str),

    #[error("conductivity must be positive everywhere (min {0:.3e})")]
    NonPositiveConductivity(f64),

    #[error("linear system is singular")]
    SingularSystem,

    #[error("observation count mismatch: {expected} excitations, {got} observed fluxes")]
    CountMismatch { expected: usize, got: usize },

    #[error("residual is not finite")]
    NonFiniteResidual,

    #[error("update is not finite")]
    NonFiniteUpdate,

    #[error("kernel family {family} is not defined on a {dims}-dimensional grid")]
    UnsupportedFamilyForGrid { family: &'static str, dims: usize },

    #[error("iteration diverged: residual grew by more than {0:.1e}x")]
    Diverged(f64),

    #[error("no line-search candidate or fallback step reduced the residual")]
    StallDetected,

    #[error("Kantorovich condition violated: h = {0:.6} > 1/2")]
    KantorovichViolated(f64),

    #[error("forcing bound reached or exceeded one: theta = {0:.6}")]
    ForcingExceedsOne(f64),

    #[error("field mean {0:.3e} is not negligible; operator is singular on constants")]
    SingularOnConstants(f64),

    #[error("residual is zero; forcing ratio undefined")]
    ZeroResidual,

    #[error("dataset is empty")]
    EmptyDataset,

    #[error("expert cross-covariance matrix is singular")]
    SingularKm,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, NkError>;
