//! Error types shared across the crate.

use thiserror::Error;

/// Convenience alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Malformed CSV input; `row` is 1-based and counts the header as row 1.
    #[error("csv parse error at row {row}: {message}")]
    Parse { row: usize, message: String },

    #[error("empty input")]
    EmptyInput,

    #[error("duplicate column name '{0}'")]
    DuplicateColumn(String),

    #[error("untypeable column '{0}': every value is missing")]
    UntypeableColumn(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },

    #[error("insufficient data: need at least {required}, got {available}")]
    InsufficientData { required: usize, available: usize },

    #[error("degenerate contingency table ({rows}x{cols})")]
    DegenerateContingency { rows: usize, cols: usize },

    #[error("degenerate target '{0}': only one class present")]
    DegenerateTarget(String),

    #[error("unknown feature '{0}'")]
    UnknownFeature(String),

    #[error("table too small for perturbation: fold leaves {remaining} rows")]
    TooSmallForPerturbation { remaining: usize },

    #[error("constraint coalition: size {size} of {features}")]
    ConstraintCoalition { size: usize, features: usize },

    #[error(transparent)]
    Llm(#[from] crate::llm_gateway::LlmError),

    #[error("QA unavailable: every chunk call failed")]
    QaUnavailable,

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("serialization error: {0}")]
    Json(#[from] serde_json::Error),
}
