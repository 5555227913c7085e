use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid basis: count {count} must be at least order {order} (order >= 1)")]
    InvalidBasis { order: usize, count: usize },

    #[error("invalid domain [{0}, {1}]")]
    InvalidDomain(f64, f64),

    #[error("t = {t} lies outside the basis domain [{lo}, {hi}]")]
    OutOfDomain { t: f64, lo: f64, hi: f64 },

    #[error("composition row {row} has no positive entry")]
    DegenerateRow { row: usize },

    #[error("invalid composition: {0}")]
    InvalidComposition(String),

    #[error("block {block} has {size} part(s); at least 2 are required")]
    DegenerateBlock { block: usize, size: usize },

    #[error("time grid needs at least 2 points, got {0}")]
    InsufficientGrid(usize),

    #[error("time grid must be strictly increasing (position {0})")]
    InvalidGrid(usize),

    #[error("control Gram matrix is numerically singular")]
    SingularControls,

    #[error("invalid folds: {0}")]
    InvalidFolds(String),

    #[error("relative magnitude undefined in window [{0}, {1}]: all coefficients vanish")]
    UndefinedShare(f64, f64),

    #[error("blocks of size {0} cannot host the truth coefficients (need at least 5 parts)")]
    InsufficientBlock(usize),

    #[error("invalid correlation {0}: covariance is not positive definite")]
    InvalidCorrelation(f64),

    #[error("signal has zero variance")]
    DegenerateSignal,

    #[error("{0} is undefined for this truth set")]
    UndefinedRate(&'static str),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("{path}: line {line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("unknown series `{0}`")]
    UnknownSeries(String),

    #[error("missing observation for unit `{unit}` at time {time}")]
    MissingCell { unit: String, time: f64 },

    #[error("unknown scenario `{0}`")]
    UnknownScenario(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}
