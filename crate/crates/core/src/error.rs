use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("empty point set")]
    EmptyPointSet,
    #[error("invalid coordinate: ({x}, {y})")]
    InvalidCoordinate { x: f64, y: f64 },
    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },
    #[error("empty batch")]
    EmptyBatch,
    #[error("model shape mismatch")]
    ShapeMismatch,
    #[error("record {index} has no floor label")]
    MissingFloorLabel { index: usize },
    #[error("no training data for floor(s) {floors:?}")]
    EmptyFloor { floors: Vec<i64> },
    #[error("no regressor for floor {0}")]
    NoRegressor(i64),
    #[error("bound inapplicable: {0}")]
    BoundInapplicable(String),
    #[error("{path}: {message}")]
    Dataset { path: String, message: String },
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn param(name: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidParameter {
            name,
            reason: reason.into(),
        }
    }
}
