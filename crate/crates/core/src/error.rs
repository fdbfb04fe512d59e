use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: expected {expected:?}, got {actual:?}")]
    ShapeMismatch {
        expected: Vec<usize>,
        actual: Vec<usize>,
    },

    #[error("code capacity too small: C({n},{h}) = {capacity} < {required}")]
    Capacity {
        n: usize,
        h: usize,
        capacity: u128,
        required: u128,
    },

    #[error("index {index} out of range (len {len})")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("split {0} is empty")]
    EmptySplit(usize),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("enumeration too large: {0}")]
    TooLarge(String),

    #[error("bound violated: {0}")]
    BoundViolated(String),

    #[error("format error: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
