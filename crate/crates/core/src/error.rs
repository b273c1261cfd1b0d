use thiserror::Error;

/// Errors raised by the numerical routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum HoferError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    #[error("vector not tangent to the sphere (residual {residual:.3e})")]
    NotTangent { residual: f64 },
    #[error("time {t} outside interval [{a}, {b}]")]
    OutOfInterval { t: f64, a: f64, b: f64 },
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("no convergence in {context} (residual {residual:.3e})")]
    NonConvergence { context: String, residual: f64 },
    #[error("trajectory left the chart box at t = {t}")]
    Escape { t: f64 },
    #[error("check failed: {context} (residual {residual:.3e})")]
    CheckFailed { context: String, residual: f64 },
}

impl HoferError {
    /// True for errors caused by bad configuration rather than numerics.
    pub fn is_config(&self) -> bool {
        matches!(self, HoferError::InvalidInput(_) | HoferError::Unsupported(_))
    }
}

pub type Result<T> = std::result::Result<T, HoferError>;
