use thiserror::Error;

/// Errors raised by capacity computations.
#[derive(Debug, Clone, PartialEq, Error)]
pub enum CapacityError {
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("dimension mismatch in {context}: expected {expected}, found {found}")]
    DimensionMismatch {
        context: String,
        expected: String,
        found: String,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("unsupported: {0}")]
    Unsupported(String),
    /// A numerically well-formed request that the discretisation cannot honour.
    #[error("numerical rejection: {0}")]
    Rejected(String),
    #[error("path enumeration guard exceeded: {paths} paths > limit {limit}")]
    PathGuard { paths: f64, limit: f64 },
    #[error("design matrix is rank deficient; deficient columns {columns:?}")]
    RankDeficient { columns: Vec<usize> },
}

impl CapacityError {
    pub(crate) fn mismatch(
        context: impl Into<String>,
        expected: impl ToString,
        found: impl ToString,
    ) -> Self {
        CapacityError::DimensionMismatch {
            context: context.into(),
            expected: expected.to_string(),
            found: found.to_string(),
        }
    }

    /// True for errors that stem from numerics rather than malformed input.
    pub fn is_numerical(&self) -> bool {
        matches!(self, CapacityError::Rejected(_) | CapacityError::RankDeficient { .. })
    }
}

pub type Result<T, E = CapacityError> = std::result::Result<T, E>;
