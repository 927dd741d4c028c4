use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid expansion order {0}")]
    InvalidOrder(usize),
    #[error("abscissa {0} outside [-1, 1]")]
    Domain(f64),
    #[error("derivative of associated Legendre functions requested at a pole")]
    PoleSingularity,
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
    #[error("unsupported derivative order {0}")]
    UnsupportedDerivative(usize),
    #[error("degenerate surface: area element {w:e} at node {node}")]
    DegenerateSurface { node: usize, w: f64 },
    #[error("equation of state domain violated at node {node}: x_s * Gamma = {value}")]
    EosDomain { node: usize, value: f64 },
    #[error("Stokes kernel evaluated at coincident points")]
    SingularKernel,
    #[error("GMRES did not converge in {iterations} iterations (relative residual {residual:e})")]
    NonConvergence {
        iterations: usize,
        residual: f64,
        best: Vec<f64>,
    },
    #[error("invalid flow: {0}")]
    InvalidFlow(String),
    #[error("degenerate state: {0}")]
    DegenerateState(String),
    #[error("time stepping stalled at t = {t} with dt = {dt:e}")]
    Stall { t: f64, dt: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
}

pub type Result<T> = std::result::Result<T, Error>;
