use thiserror::Error;

/// Errors produced by the search engine.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: {detail}")]
    Shape { context: String, detail: String },

    #[error("unsupported precision: {0} bits (supported: 2..=8)")]
    UnsupportedPrecision(u32),

    #[error("invalid quantization range [{alpha}, {beta})")]
    InvalidRange { alpha: f64, beta: f64 },

    #[error("temperature must be positive, got {0}")]
    InvalidTemperature(f64),

    #[error("autograd: {0}")]
    Graph(String),

    #[error("configuration: {0}")]
    Config(String),

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),

    #[error("dataset: {0}")]
    Dataset(String),

    #[error("format: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(context: impl Into<String>, detail: impl Into<String>) -> Self {
        Error::Shape {
            context: context.into(),
            detail: detail.into(),
        }
    }
}
