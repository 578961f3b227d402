use chanmix_core::Error as CoreError;
use thiserror::Error;

/// Failures of a CLI command, each with its own process exit code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error("lowered model differs from the fake-quantized reference by {0:e}")]
    Equivalence(f64),

    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Other(_) => 1,
            CliError::Config(_) => 2,
            CliError::Diverged(_) => 3,
            CliError::Equivalence(_) => 4,
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::Config(_) | CoreError::UnsupportedPrecision(_) | CoreError::InvalidRange { .. } => {
                CliError::Config(e.to_string())
            }
            CoreError::NonFinite(m) => CliError::Diverged(m),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
