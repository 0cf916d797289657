//! Crate-wide error type.

use thiserror::Error;

use crate::scm::ContextId;

#[derive(Debug, Error)]
pub enum Error {
    /// A context id was queried that the parameter set does not contain.
    #[error("unknown context `{0}`")]
    UnknownContext(ContextId),

    /// A conditional probability was requested whose conditioning event
    /// has zero mass. Raised instead of returning NaN so pipelines fail
    /// loudly.
    #[error("undefined conditional: {0}")]
    UndefinedConditional(String),

    /// Two routes that must agree exactly (within the closed-form
    /// tolerance) disagreed.
    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("invalid parameters: {0}")]
    InvalidParams(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    /// Scenario premises are too far from holding for the limiting form
    /// to be meaningful.
    #[error("scenario premises violated: slack {slack:.4} exceeds {limit:.4}")]
    PremisesViolated { slack: f64, limit: f64 },

    /// Attribution is only defined for statistically significant results.
    #[error("no attribution: result is not statistically significant")]
    NotSignificant,

    #[error("parse error in {source_name} at row {row}: {message}")]
    Parse {
        source_name: String,
        row: u64,
        message: String,
    },

    #[error("data integrity: {0}")]
    Integrity(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
