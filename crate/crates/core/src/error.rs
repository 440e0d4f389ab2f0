use thiserror::Error;

/// Errors raised anywhere in the estimation pipeline.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("parse error at row {row}, column '{column}': {message}")]
    Parse {
        row: usize,
        column: String,
        message: String,
    },

    #[error("validation error: {0}")]
    Validation(String),

    #[error("unknown period {0}")]
    UnknownPeriod(i64),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("all weights are zero")]
    ZeroWeights,

    #[error("labels contain a single class")]
    SingleClass,

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("bandwidth too small: fewer than two points in the kernel window at delta = {delta}")]
    BandwidthTooSmall { delta: f64 },

    #[error("no candidate bandwidth admits every leave-one-out fit")]
    NoFeasibleBandwidth,

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("degenerate exposure: {0}")]
    DegenerateExposure(String),

    #[error("dose {dose} of unit {unit} lies outside the tabulated range")]
    Extrapolation { unit: String, dose: f64 },

    #[error("invalid nuisance specification: {0}")]
    InvalidSpec(String),

    #[error("missing nuisance specification for {0}")]
    MissingSpec(String),

    #[error("singular matrix: {0}")]
    Singular(String),

    #[error("io error: {0}")]
    Io(String),
}

pub type Result<T> = std::result::Result<T, Error>;

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
