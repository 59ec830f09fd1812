use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {what} (expected {expected}, got {got})")]
    Shape {
        what: &'static str,
        expected: usize,
        got: usize,
    },
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("non-finite value in {0}")]
    NonFinite(&'static str),
    #[error("unknown loss tag `{0}`")]
    UnknownLossTag(String),
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },
    #[error("model is not trained: {0}")]
    Untrained(&'static str),
    #[error("{path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },
    #[error("record {index}: dimension mismatch ({detail})")]
    RecordDimension { index: usize, detail: String },
    #[error("invalid config: {0}")]
    Config(String),
    #[error("problem too large for exact enumeration: {entries} table entries (limit {limit})")]
    TooLarge { entries: u64, limit: u64 },
    #[error("singular covariance: {0}")]
    Singular(String),
    #[error("model failure: {0}")]
    Model(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Short machine-readable tag used in CLI error objects.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Shape { .. } => "shape",
            Error::InvalidInput(_) => "invalid_input",
            Error::NonFinite(_) => "non_finite",
            Error::UnknownLossTag(_) => "unknown_loss_tag",
            Error::Diverged { .. } => "diverged",
            Error::Untrained(_) => "untrained",
            Error::Parse { .. } => "parse",
            Error::RecordDimension { .. } => "record_dimension",
            Error::Config(_) => "config",
            Error::TooLarge { .. } => "too_large",
            Error::Singular(_) => "singular",
            Error::Model(_) => "model",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }
}

pub(crate) fn check_len(what: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(Error::Shape {
            what,
            expected,
            got,
        })
    }
}
