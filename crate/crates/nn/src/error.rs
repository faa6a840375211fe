use thiserror::Error;

/// Errors raised by layers, losses and model plumbing.
#[derive(Debug, Error)]
pub enum NnError {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    ShapeMismatch {
        context: &'static str,
        expected: String,
        actual: String,
    },
    #[error("batch normalization needs at least 2 valid positions per channel in training mode, got {0}")]
    DegenerateBatch(usize),
    #[error("dropout rate {0} outside [0, 1)")]
    InvalidRate(f64),
    #[error("sample weights sum to {0}, expected a positive total")]
    NonPositiveWeightSum(f64),
    #[error("invalid model spec: {0}")]
    InvalidSpec(String),
    #[error("snapshot does not match model: {0}")]
    SnapshotMismatch(String),
    #[error("malformed snapshot: {0}")]
    MalformedSnapshot(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = NnError> = std::result::Result<T, E>;

pub(crate) fn shape_err(
    context: &'static str,
    expected: impl Into<String>,
    actual: impl Into<String>,
) -> NnError {
    NnError::ShapeMismatch {
        context,
        expected: expected.into(),
        actual: actual.into(),
    }
}
