use thiserror::Error;

/// Errors raised across the lab. Numerical failures carry enough context to
/// locate the offending input; configuration failures carry a message.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("vector norm {norm:e} is below the collapse threshold")]
    NearZeroNorm { norm: f64 },
    #[error("empty input")]
    EmptyInput,
    #[error("alpha must be positive and finite, got {0}")]
    NonPositiveAlpha(f64),
    #[error("parameter `{name}` must be positive and finite, got {value}")]
    NonPositiveParameter { name: &'static str, value: f64 },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("precondition violated: {0}")]
    PreconditionViolated(String),
    #[error("classes are unbalanced: counts {0:?}")]
    UnbalancedClasses(Vec<usize>),
    #[error("class {0} has fewer than two samples")]
    SingletonClass(usize),
    #[error("k = {k} exceeds the training set size {n}")]
    KTooLarge { k: usize, n: usize },
    #[error("batch needs at least two pairs, got {0}")]
    BatchTooSmall(usize),
    #[error("non-finite value encountered: {0}")]
    NonFinite(&'static str),
    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),
    #[error("numerical failure at epoch {epoch}: {source}")]
    AtEpoch {
        epoch: usize,
        #[source]
        source: Box<Error>,
    },
    #[error("io error: {0}")]
    Io(String),
    #[error("parse error: {0}")]
    Parse(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
