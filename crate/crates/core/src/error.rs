use std::io;

use thiserror::Error;

use crate::model::Violation;

pub type Result<T> = std::result::Result<T, EonError>;

#[derive(Debug, Error)]
pub enum EonError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// A non-finite value appeared while solving; `layer` is 1-based, 0 for the input layer.
    #[error("numerical failure in layer {layer}: {context}")]
    Numerical { layer: usize, context: String },

    #[error("model failed validation ({} violation(s)): {}", .0.len(), summarize(.0))]
    Validation(Vec<Violation>),

    #[error("i/o error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed model file: {0}")]
    Malformed(String),

    #[error("unsupported model format version {found} (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },
}

impl EonError {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        EonError::InvalidArgument(msg.into())
    }

    /// Attach outer-iteration context to a numerical failure, leave other kinds untouched.
    pub fn with_iteration(self, iteration: usize) -> Self {
        match self {
            EonError::Numerical { layer, context } => EonError::Numerical {
                layer,
                context: format!("outer iteration {iteration}: {context}"),
            },
            other => other,
        }
    }
}

fn summarize(violations: &[Violation]) -> String {
    violations
        .iter()
        .take(3)
        .map(|v| v.to_string())
        .collect::<Vec<_>>()
        .join("; ")
}
