use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, found {found}")]
    Dimension { expected: usize, found: usize },

    #[error("matrix `{name}` is not symmetric (relative asymmetry {asymmetry:e})")]
    NotSymmetric { name: String, asymmetry: f64 },

    #[error("matrix `{name}` is not positive definite (minimal eigenvalue {min_eigenvalue:e})")]
    NotPositiveDefinite { name: String, min_eigenvalue: f64 },

    #[error("time {t} outside of [{start}, {end}]")]
    TimeOutOfRange { t: f64, start: f64, end: f64 },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("form validation failed: {0}")]
    Validation(String),

    #[error("linear solve failed: {0}")]
    Singular(String),

    #[error("step size underflow at t = {t} (h = {h:e}); problem is too stiff for the explicit integrator")]
    Stiff { t: f64, h: f64 },

    #[error("fixed-point iteration did not converge after {iterations} iterations (last distance {last:e})")]
    NonConvergence {
        iterations: usize,
        last: f64,
        distances: Vec<f64>,
    },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_len(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(Error::Dimension { expected, found })
    }
}
