use thiserror::Error;

/// Errors raised by the engine.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum DrFreeError {
    #[error("absolute continuity violated: p has mass {p} at support index {index} where q has none")]
    AbsoluteContinuityViolation { index: usize, p: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("covariance is not positive definite")]
    NonPositiveDefinite,
    #[error("invalid density: {0}")]
    InvalidDensity(String),
    #[error("empty input")]
    EmptyInput,
    #[error("non-finite log-ratio ln(p_hat/q_x) at sample {index}")]
    NonFiniteRatio { index: usize },
    #[error("scalar dual solver failed: {0}")]
    SolverFailure(String),
    #[error("worst-case ratio requested on the alpha = 0 branch")]
    ZeroBranch,
    #[error("brute-force oracle supports at most {max} points, got {got}")]
    SupportTooLarge { max: usize, got: usize },
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("action grids differ")]
    GridMismatch,
    #[error("query ({x}, {y}) lies outside the cost-to-go lattice")]
    LatticeTooCoarse { x: f64, y: f64 },
    #[error("ambiguity radius is exactly zero")]
    DegenerateRadius,
    #[error("probe state ({x}, {y}) lies outside the workspace")]
    ProbeOutsideWorkspace { x: f64, y: f64 },
}

pub type Result<T> = std::result::Result<T, DrFreeError>;
