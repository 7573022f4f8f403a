use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value or argument violates its contract.
    #[error("{field}: {reason}")]
    Invalid { field: String, reason: String },

    /// Input outside the mathematical domain of an operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// An iterative or closed-form computation could not produce a finite result.
    #[error("numerical failure: {0}")]
    Numerical(String),

    /// A lookup that must succeed by construction did not.
    #[error("integrity error: {0}")]
    Integrity(String),

    #[error("platoon size {size} exceeds the configured limit {limit} (2^{size} scenarios)")]
    TooLarge { size: usize, limit: usize },

    #[error("line {line}: {reason}")]
    Parse { line: usize, reason: String },

    #[error("collision: vehicle {vehicle} reached spacing {spacing:.3} m at t = {time:.1} s")]
    Collision { vehicle: usize, time: f64, spacing: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn invalid(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::Invalid { field: field.into(), reason: reason.into() }
    }

    /// Process exit status for the CLI: 1 for validation problems, 2 for
    /// numerical failures and unstable runs.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Numerical(_) | Error::Collision { .. } | Error::Integrity(_) => 2,
            _ => 1,
        }
    }
}
