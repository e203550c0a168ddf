use thiserror::Error;

/// Errors surfaced by model validation, the CAVI engine, and the data pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {context}: expected {expected}, got {actual}")]
    DimensionMismatch {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("pi not a simplex: entries must be positive and sum to 1 (sum = {sum})")]
    NotASimplex { sum: f64 },

    #[error("{field} not SPD: Cholesky failed at pivot {pivot}")]
    NotSpd { field: String, pivot: usize },

    #[error("invalid value in {field}: {reason}")]
    InvalidValue { field: String, reason: String },

    #[error("fewer observations than clusters: T = {observations}, K = {clusters}")]
    TooFewObservations { observations: usize, clusters: usize },

    #[error("empty vector passed to {context}")]
    EmptyInput { context: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("all {0} restarts failed")]
    AllRestartsFailed(usize),

    #[error("cluster matching supports K <= 8, got K = {0}")]
    TooManyClusters(usize),

    #[error("csv parse error at {path}:{line}: {reason}")]
    CsvParse {
        path: String,
        line: usize,
        reason: String,
    },

    #[error("duplicate date {date} in {path}")]
    DuplicateDate { date: String, path: String },

    #[error("insufficient overlap between series: {available} common dates, need {required}")]
    InsufficientOverlap { available: usize, required: usize },

    #[error("config error at {pointer}: {reason}")]
    Config { pointer: String, reason: String },

    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;
