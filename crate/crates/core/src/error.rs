use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("length mismatch: {0}")]
    LengthMismatch(String),

    #[error("architecture mismatch between parameter vectors")]
    ArchMismatch,

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("parse error at row {row}, column {column}: {message}")]
    Parse {
        /// 1-based data row (header excluded).
        row: usize,
        column: String,
        message: String,
    },

    #[error("missing column: {0}")]
    MissingColumn(String),

    #[error("infeasible partition: {0}")]
    InfeasiblePartition(String),

    #[error("invalid fraction {0}: must lie strictly between 0 and 1")]
    InvalidFraction(f64),

    #[error("invalid neighbor count m={m} for {rows} rows: need m >= 2 and rows > m")]
    InvalidM { m: usize, rows: usize },

    #[error("too few updates: {count} updates cannot tolerate f={f} (need at least f+2)")]
    TooFewUpdates { count: usize, f: usize },

    #[error("invalid sigma {0}: must be positive")]
    InvalidSigma(f64),

    /// Invalid configuration, tagged with the offending key path.
    #[error("config error at `{field}`: {message}")]
    Config { field: String, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Config {
            field: field.into(),
            message: message.into(),
        }
    }

    /// True for errors caused by a bad configuration rather than a runtime failure.
    pub fn is_config(&self) -> bool {
        matches!(self, Error::Config { .. })
    }
}
