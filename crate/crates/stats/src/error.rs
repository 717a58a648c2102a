use thiserror::Error;

pub type Result<T> = std::result::Result<T, StatsError>;

#[derive(Debug, Error)]
pub enum StatsError {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Input for which the statistic is undefined (zero variance, empty groups).
    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("labels contain a single class; {0} is undefined")]
    SingleClass(&'static str),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("row {row}: {message}")]
    Schema { row: usize, message: String },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
