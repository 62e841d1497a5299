use thiserror::Error;

#[derive(Error, Debug, Clone, PartialEq)]
pub enum FusionError {
    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid shape: {0}")]
    InvalidShape(String),

    #[error("index {index} out of range (limit {limit})")]
    Index { index: usize, limit: usize },

    #[error("invalid spec: {0}")]
    InvalidSpec(String),

    #[error("{0} is not a pure bilinear scheme")]
    Unsupported(&'static str),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFinite { epoch: usize, batch: usize },

    #[error("config error: {0}")]
    Config(String),
}

impl FusionError {
    pub(crate) fn shape(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        FusionError::Shape {
            context: context.into(),
            expected,
            actual,
        }
    }
}

pub type Result<T> = std::result::Result<T, FusionError>;
