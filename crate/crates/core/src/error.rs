use thiserror::Error;

/// Errors raised by the numerical routines, processes, and objectives.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("matrix must be square, got {rows}x{cols}")]
    NotSquare { rows: usize, cols: usize },

    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),

    #[error("matrix is not symmetric (max deviation {0:.3e})")]
    NotSymmetric(f64),

    #[error("matrix is not positive semi-definite (eigenvalue {0:.3e})")]
    NotPsd(f64),

    #[error("matrix is numerically singular in {0}")]
    Singular(&'static str),

    #[error("invalid time interval [{t0}, {t1}]")]
    InvalidInterval { t0: f64, t1: f64 },

    #[error("step size underflow at t = {t:.6e} (step {step:.3e}); problem is stiff or blowing up")]
    StepUnderflow { t: f64, step: f64 },

    #[error("non-finite state at step {step} (t = {t:.6e})")]
    NonFiniteState { step: usize, t: f64 },

    #[error("quadrature did not converge on [{a}, {b}]")]
    QuadratureNonConvergence { a: f64, b: f64 },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("unsupported: {0}")]
    Unsupported(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
