use npg_core::NpgError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// A config or instance file failed validation. The message names the field.
    #[error("invalid {what}: {message}")]
    Validation { what: &'static str, message: String },
    /// A solver diverged in a run where divergence was not the point.
    #[error("{run} diverged")]
    UnexpectedDivergence { run: String },
    #[error(transparent)]
    Solver(#[from] NpgError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    pub(crate) fn config(message: impl Into<String>) -> Self {
        Self::Validation { what: "config", message: message.into() }
    }

    pub(crate) fn instance(message: impl Into<String>) -> Self {
        Self::Validation { what: "instance", message: message.into() }
    }

    /// Process exit code: 2 for validation failures, 3 for unexpected
    /// divergence, 1 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Validation { .. } => 2,
            Self::Solver(NpgError::InvalidInput(_) | NpgError::InvalidStepsize { .. }) => 2,
            Self::Solver(NpgError::DimensionMismatch { .. }) => 2,
            Self::UnexpectedDivergence { .. } => 3,
            Self::Solver(NpgError::DivergedParameter { .. }) => 3,
            _ => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
