use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid weight vector: {0}")]
    InvalidWeights(String),

    #[error("term with multi-index {beta} has weighted degree {degree}, expected 2")]
    NotHomogeneous { beta: String, degree: String },

    #[error("symbol is not positive-definite (min of real part on the unit sphere = {min_value:e})")]
    NotPositiveDefinite { min_value: f64 },

    #[error("parameter `{name}` must be positive, got {value}")]
    NonPositive { name: &'static str, value: f64 },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid grid: {0}")]
    InvalidGrid(String),

    #[error("frequency spacing {spacing:e} on axis {axis} exceeds the Nyquist limit {limit:e}")]
    Nyquist { axis: usize, spacing: f64, limit: f64 },

    #[error("weighted degree |alpha:2m| = {degree} is not below kappa = {kappa}; no majorant exists")]
    MajorantDegree { degree: String, kappa: u32 },

    #[error("iteration did not converge: {0}")]
    NoConvergence(String),

    #[error("ascent diverged (objective unbounded above); the symbol is not coercive")]
    Divergence,

    #[error("coefficient field violates {condition}: {detail}")]
    CoefficientCondition { condition: &'static str, detail: String },

    #[error("twist exponent max|lambda(phi)| = {max_exponent:.3} exceeds the overflow guard {guard}; use |lambda| <= {advisory:.4}")]
    TwistOverflow { max_exponent: f64, guard: f64, advisory: f64 },

    #[error("anchors leave no room for a certified cutoff on axis {axis}: need width {width:.4}")]
    AnchorsTooCloseToBoundary { axis: usize, width: f64 },

    #[error("cutoff derivative of order {order} reaches {value:.6} > 1")]
    CutoffCertification { order: usize, value: f64 },

    #[error("operator has {unknowns} unknowns, above the dense limit {limit}")]
    TooLarge { unknowns: usize, limit: usize },

    #[error("node {0} is not an interior grid node")]
    NodeOutsideGrid(String),

    #[error("operators live on different grids")]
    GridMismatch,

    #[error("operation requires {0}")]
    Unsupported(String),

    #[error("bound family infeasible: {0}")]
    Infeasible(String),
}

pub type Result<T> = core::result::Result<T, Error>;
