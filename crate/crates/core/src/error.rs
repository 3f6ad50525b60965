use thiserror::Error;

pub type Result<T> = std::result::Result<T, SeraError>;

#[derive(Debug, Error)]
pub enum SeraError {
    /// An argument lies outside the domain of the operation.
    #[error("domain error: {0}")]
    Domain(String),

    /// A numerical configuration (grid, tolerance) is unsuitable.
    #[error("configuration error: {0}")]
    Config(String),

    /// An invariant that construction should have guaranteed does not hold.
    #[error("internal consistency error: {0}")]
    Internal(String),

    /// The recovered geometry contradicts the theory for the chosen parameters.
    #[error("recovery error: {0}")]
    Recovery(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl SeraError {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        SeraError::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        SeraError::Config(msg.into())
    }
}
