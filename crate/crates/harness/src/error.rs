use eon_core::EonError;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, HarnessError>;

#[derive(Debug, Error)]
pub enum HarnessError {
    /// Bad flags or a config file that does not parse.
    #[error("usage: {0}")]
    Usage(String),
    /// Input data that cannot be read or is not a valid dataset.
    #[error("data: {0}")]
    Data(String),
    #[error("metric undefined: {0}")]
    UndefinedMetric(String),
    #[error(transparent)]
    Core(#[from] EonError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

impl HarnessError {
    /// Process exit code for the CLI: 2 usage, 3 data, 4 numerical.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Usage(_) => 2,
            HarnessError::Data(_) | HarnessError::Io(_) => 3,
            HarnessError::UndefinedMetric(_) => 4,
            HarnessError::Core(e) => match e {
                EonError::Numerical { .. } => 4,
                _ => 3,
            },
        }
    }
}

impl From<csv::Error> for HarnessError {
    fn from(e: csv::Error) -> Self {
        HarnessError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for HarnessError {
    fn from(e: serde_json::Error) -> Self {
        HarnessError::Data(e.to_string())
    }
}
