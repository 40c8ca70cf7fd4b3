use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid spline specification: {0}")]
    InvalidSpec(String),

    #[error("point {s} lies outside the spline domain [{lower}, {upper}]")]
    OutOfDomain { s: f64, lower: f64, upper: f64 },

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("missing required column `{0}`")]
    MissingColumn(String),

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("{dropped} of {total} rows could not be parsed")]
    TooManyDropped { dropped: usize, total: usize },

    #[error("unknown player `{0}`")]
    UnknownPlayer(String),

    #[error("need at least {needed} draws, got {got}")]
    InsufficientDraws { needed: usize, got: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("results come from different datasets ({0} vs {1})")]
    DatasetMismatch(String, String),

    #[error("sampler failure: {0}")]
    Sampler(String),

    #[error("malformed draws file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
