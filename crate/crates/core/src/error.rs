use thiserror::Error;

/// Errors raised by operators, solvers and objective evaluations.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("ill-conditioned {what} (condition estimate {condition:.3e})")]
    IllConditioned { what: &'static str, condition: f64 },

    #[error("matrix is not positive definite: {0}")]
    NotPositiveDefinite(String),

    #[error("singular geometry: {0}")]
    SingularGeometry(String),

    #[error("index {index} out of range for dimension {dim}")]
    IndexOutOfRange { index: usize, dim: usize },

    #[error("unsupported geometry: {0}")]
    UnsupportedGeometry(String),

    #[error("degenerate weights: {0}")]
    DegenerateWeights(String),

    #[error("invalid kernel: {0}")]
    InvalidKernel(String),

    #[error("numerical inconsistency: {0}")]
    Numerical(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn check_dim(context: &'static str, expected: usize, actual: usize) -> Result<()> {
    if expected == actual {
        Ok(())
    } else {
        Err(Error::DimensionMismatch {
            context,
            expected,
            actual,
        })
    }
}
