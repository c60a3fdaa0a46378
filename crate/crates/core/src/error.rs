use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("column {column} ('{name}') has no observed values")]
    EmptyColumn { column: usize, name: String },

    #[error("no observed values to fit a marginal")]
    NoObservedValues,

    #[error("invalid weights: {0}")]
    InvalidWeights(String),

    #[error("probability {0} is outside (0, 1)")]
    InvalidProbability(f64),

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("covariance block for row {row} is singular even after jitter {jitter:e}")]
    SingularCovariance { row: usize, jitter: f64 },

    #[error("non-positive diagonal entry {value} for column {column}")]
    NonPositiveDiagonal { column: usize, value: f64 },

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("revealed row disagrees with the input at column {column}: {input} vs {revealed}")]
    RevealMismatch {
        column: usize,
        input: f64,
        revealed: f64,
    },

    #[error("column {column} has {count} observed values in the initialization block (need at least 2)")]
    InsufficientInit { column: usize, count: usize },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    /// Attach a row index to a [`Error::SingularCovariance`] raised below the row level.
    pub fn at_row(self, row: usize) -> Self {
        match self {
            Error::SingularCovariance { jitter, .. } => Error::SingularCovariance { row, jitter },
            other => other,
        }
    }
}
