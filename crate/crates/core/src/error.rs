use thiserror::Error;

/// Errors produced by the estimation routines.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum ZissError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("point {value} lies outside the domain [{lo}, {hi}]")]
    Domain { value: f64, lo: f64, hi: f64 },

    #[error("singular system: {0}")]
    Singular(String),

    #[error("{solver} did not converge after {iterations} iterations (residual {residual:e})")]
    NonConvergence {
        solver: &'static str,
        iterations: usize,
        residual: f64,
    },

    #[error("degenerate data: {0}")]
    Degenerate(String),
}

impl ZissError {
    /// True for failures of a numerical routine, as opposed to bad input.
    pub fn is_numerical(&self) -> bool {
        matches!(
            self,
            ZissError::Singular(_) | ZissError::NonConvergence { .. }
        )
    }
}

pub type Result<T> = std::result::Result<T, ZissError>;
