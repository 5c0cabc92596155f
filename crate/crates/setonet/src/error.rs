use thiserror::Error;

/// Library-wide error type.
///
/// Variants map onto the CLI exit-code contract: validation problems exit 2,
/// numerical failures exit 3, I/O failures exit 4.
#[derive(Debug, Error)]
pub enum SetONetError {
    /// Bad configuration or malformed inputs (shape mismatches, empty sets,
    /// out-of-range options).
    #[error("validation: {0}")]
    Validation(String),

    /// A numerical routine failed to meet its contract (non-convergence,
    /// nonfinite values, singular systems).
    #[error("numerical: {0}")]
    Numerical(String),

    /// Filesystem or serialization failure.
    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    /// Dataset or config (de)serialization failure.
    #[error("format: {0}")]
    Format(String),
}

impl SetONetError {
    pub fn validation(msg: impl Into<String>) -> Self {
        SetONetError::Validation(msg.into())
    }

    pub fn numerical(msg: impl Into<String>) -> Self {
        SetONetError::Numerical(msg.into())
    }

    pub fn format(msg: impl Into<String>) -> Self {
        SetONetError::Format(msg.into())
    }

    /// Process exit code for the CLI: 2 validation, 3 numerical, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            SetONetError::Validation(_) => 2,
            SetONetError::Numerical(_) => 3,
            SetONetError::Io(_) | SetONetError::Format(_) => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, SetONetError>;
