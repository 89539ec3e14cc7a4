use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {left:?} vs {right:?}")]
    Dimension {
        op: &'static str,
        left: Vec<usize>,
        right: Vec<usize>,
    },
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("encoding error: {0}")]
    Encoding(String),
    #[error("ingest error: {0}")]
    Ingest(String),
    #[error("rejected row {row}: {reason}")]
    RejectedRow { row: usize, reason: String },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("undefined metric: {0}")]
    UndefinedMetric(String),
    #[error("non-finite gradient for parameter `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite loss at epoch {epoch}, batch {batch}")]
    NonFiniteLoss { epoch: usize, batch: usize },
    #[error("unsupported model variant: {0}")]
    UnsupportedVariant(String),
    #[error("schema mismatch: {0}")]
    Schema(String),
    #[error("artifact error: {0}")]
    Artifact(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, left: &[usize], right: &[usize]) -> Self {
        Error::Dimension {
            op,
            left: left.to_vec(),
            right: right.to_vec(),
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
