use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    /// A covariance factorization met an eigenvalue below the clipping tolerance.
    #[error("matrix is not positive semidefinite (min eigenvalue {min_eig:e}, norm {norm:e})")]
    NotPsd { min_eig: f64, norm: f64 },
    #[error("singular matrix: {0}")]
    Singular(String),
    #[error("ill-conditioned matrix: condition estimate {0:e}")]
    IllConditioned(f64),
    /// Fixed-point iteration ran out of iterations.
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("cannot normalize precoder: {0}")]
    ZeroPower(String),
    #[error("non-positive SINR denominator {0:e} for user ({1}, {2})")]
    NonPositiveDenominator(f64, usize, usize),
    #[error("feasibility solver failed: {0}")]
    Solver(String),
}

pub type Result<T, E = Error> = core::result::Result<T, E>;
