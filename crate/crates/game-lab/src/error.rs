//! Shared error taxonomy for the laboratory.

/// Errors surfaced by library operations.
///
/// `InvalidArgument` / `ShapeMismatch` / `Scenario` indicate bad inputs and map
/// to process exit code 2; `NumericalFailure` means a numeric procedure could
/// not complete (lost positive semidefiniteness, rank-deficient regression)
/// and maps to exit code 1; `ContractViolation` means a caller-supplied object
/// broke a documented precondition (e.g. a strategy rule that is not adapted
/// or not nonnegative).
#[derive(Debug, thiserror::Error)]
pub enum LabError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("numerical failure in {context}: {detail}")]
    NumericalFailure { context: String, detail: String },

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("scenario section [{section}]: {detail}")]
    Scenario { section: String, detail: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl LabError {
    pub fn invalid(msg: impl Into<String>) -> Self {
        LabError::InvalidArgument(msg.into())
    }

    pub fn shape(msg: impl Into<String>) -> Self {
        LabError::ShapeMismatch(msg.into())
    }

    pub fn numerical(context: impl Into<String>, detail: impl Into<String>) -> Self {
        LabError::NumericalFailure {
            context: context.into(),
            detail: detail.into(),
        }
    }

    pub fn scenario(section: impl Into<String>, detail: impl Into<String>) -> Self {
        LabError::Scenario {
            section: section.into(),
            detail: detail.into(),
        }
    }

    /// Process exit code the error class maps to (see the CLI contract).
    pub fn exit_code(&self) -> i32 {
        match self {
            LabError::NumericalFailure { .. } => 1,
            _ => 2,
        }
    }
}

pub type Result<T> = std::result::Result<T, LabError>;
