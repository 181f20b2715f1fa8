use std::io;

/// Errors raised by the numerical core.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid axis index {axis} for dimension {dim}")]
    InvalidAxis { axis: usize, dim: usize },
    #[error("not in the range of the gradient: component {component} has mean {mean:e}")]
    NotInGradientRange { component: usize, mean: f64 },
    #[error("curl-free hypothesis violated: relative curl residual {residual:e} exceeds {tol:e}")]
    CurlNotFree { residual: f64, tol: f64 },
    #[error("sample count must be positive")]
    EmptySample,
    #[error("scale unresolved: {points:.2} quadrature points per periodic cell per axis, need at least {required}")]
    ScaleUnresolved { points: f64, required: usize },
    #[error("point {point:?} lies outside the domain")]
    OutOfDomain { point: Vec<f64> },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("invalid input: {0}")]
    Invalid(String),
    #[error("asymmetric strain: |e12 - e21| = {0:e}")]
    AsymmetricStrain(f64),
    #[error("tensor not elliptic: {0}")]
    NotElliptic(String),
    #[error("density floor violated: min density {min:e} at {location}")]
    DensityFloor { min: f64, location: String },
    #[error("fissure phase is not face-connected")]
    Disconnected,
    #[error("CFL violation: dt = {dt:e} exceeds limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },
    #[error("{solver} did not converge: relative residual {residual:e} after {iterations} iterations")]
    NoConvergence { solver: &'static str, iterations: usize, residual: f64 },
    #[error("divergence constraint violated: max |div| = {0:e}")]
    Divergence(f64),
    #[error("mismatched time grids: {0}")]
    TimeGrid(String),
    #[error("empty test-function set")]
    EmptyTestSet,
    #[error("test function not admissible: {0}")]
    Inadmissible(String),
    #[error("non-invariant weight: stochastic derivative norm {0:e}")]
    NonInvariant(f64),
    #[error("malformed data: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
