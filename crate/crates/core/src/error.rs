use thiserror::Error;

pub type Result<T> = std::result::Result<T, NpgError>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NpgError {
    #[error("parameter coordinate {index} became non-finite or exceeded the blow-up threshold")]
    DivergedParameter { index: usize },

    #[error("support mismatch at coordinate {index}: reference has mass where the argument is zero")]
    SupportMismatch { index: usize },

    #[error("stepsize {eta} violates the admissible bound {bound}")]
    InvalidStepsize { eta: f64, bound: f64 },

    #[error("feature block is singular or ill-conditioned (condition number {condition:e})")]
    SingularFeatureBlock { condition: f64 },

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("implicit proximal step did not converge after {iterations} inner iterations (last change {residual:e})")]
    ImplicitSolveFailed { iterations: usize, residual: f64 },

    #[error("oracle did not reach the requested residual after {iterations} iterations (residual {residual:e})")]
    OracleNotConverged { iterations: usize, residual: f64 },

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

pub(crate) fn check_dim(expected: usize, found: usize) -> Result<()> {
    if expected == found {
        Ok(())
    } else {
        Err(NpgError::DimensionMismatch { expected, found })
    }
}
