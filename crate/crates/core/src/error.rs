use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("point {point:?} lies outside the grid bounds")]
    OutOfDomain { point: Vec<f64> },

    #[error("rejection sampler acceptance rate {rate:.3e} below 1e-4")]
    EnvelopeFailure { rate: f64 },

    /// The supremum defining the conjugate sits on the grid boundary with the
    /// slope still pointing outward; `value` is the boundary supremum.
    #[error("conjugate unbounded on the grid (boundary value {value})")]
    UnboundedConjugate { value: f64 },

    #[error("quadrature overflow at t={t}: integrability condition violated")]
    QuadratureOverflow { t: f64 },

    #[error("Newton iteration did not converge after {iterations} iterations (residual {residual:.3e})")]
    NewtonDivergence { iterations: usize, residual: f64 },

    #[error("grid captured only {captured:.6} of the probability mass")]
    MassLeak { captured: f64 },

    #[error("no convergence after {iterations} iterations (last error {last_error:.3e})")]
    NoConvergence { iterations: usize, last_error: f64 },

    #[error("risk aversion {gamma} is not below the admissible threshold {gamma0}")]
    RegimeViolation { gamma: f64, gamma0: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;
