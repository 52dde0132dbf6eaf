use thiserror::Error;

/// Errors raised by the numerical core.
///
/// Numerical payloads are carried as `f64` so the error type stays independent of the
/// scalar the computation ran in.
#[derive(Debug, Error)]
pub enum Error {
    #[error("non-positive curvature: eigenvalue {value:e} is below the cone floor {floor:e}")]
    NonPositiveCurvature { value: f64, floor: f64 },

    #[error("speed {name} evaluated to a non-positive value {value:e}")]
    NonPositiveSpeed { name: String, value: f64 },

    #[error("invalid cone segment {index}: endpoint leaves the positive-definite cone")]
    InvalidSegment { index: usize },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("convexity lost at node {node}: radius of curvature {rho:e}")]
    ConvexityLost { node: usize, rho: f64 },

    #[error("time step {dt:e} violates the stability bound {bound:e}")]
    StabilityViolation { dt: f64, bound: f64 },

    #[error("speed {name} is not strictly increasing on curvature {at:e}; the curve flow would not be parabolic")]
    NotParabolic { name: String, at: f64 },

    #[error("trajectory is not usable: {0}")]
    IncompleteTrajectory(String),

    #[error("arrival-time bracket failed at ({x}, {y}): containment is not monotone in time")]
    NonMonotoneContainment { x: f64, y: f64 },

    #[error("gradient {norm:e} below floor at cell ({i}, {j})")]
    DegenerateGradient { i: usize, j: usize, norm: f64 },

    #[error("point ({x}, {y}) falls in an excluded cell")]
    MaskedPoint { x: f64, y: f64 },

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("unknown speed {0:?}")]
    UnknownSpeed(String),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
