use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    Shape {
        op: &'static str,
        left: (usize, usize),
        right: (usize, usize),
    },

    #[error("invalid matrix: {0}")]
    InvalidMatrix(String),

    #[error("rank {k} must satisfy 1 <= k < min(m, n) = {limit}")]
    Rank { k: usize, limit: usize },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("negative entry {value} at ({row}, {col})")]
    NegativeEntry { row: usize, col: usize, value: f64 },

    #[error("range error: {0}")]
    Range(String),

    #[error("size error: {0}")]
    Size(String),

    #[error("degenerate input: {0}")]
    Degenerate(String),

    #[error("factorization with seed {seed} failed: {source}")]
    Factorize {
        seed: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("format error: {0}")]
    Format(String),

    #[error("conflicting values for {station} at {timestamp} ({pollutant}): {first} vs {second}")]
    Conflict {
        station: String,
        timestamp: String,
        pollutant: String,
        first: f64,
        second: f64,
    },

    #[error("cannot impute station {0}: no observed values")]
    Imputation(String),

    #[error("empty wind rose: {0}")]
    EmptyRose(String),

    #[error("undefined share: {0}")]
    UndefinedShare(String),

    #[error("feature {index}: {source}")]
    Feature {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("reference has no entry for pollutant {0}")]
    Coverage(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, left: (usize, usize), right: (usize, usize)) -> Self {
        Error::Shape { op, left, right }
    }
}
