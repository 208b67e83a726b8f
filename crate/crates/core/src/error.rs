use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {what} has length {got}, expected {expected}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("probability out of range: d[{index}] = {value} is not in [0, 1]")]
    ProbabilityOutOfRange { index: usize, value: f64 },

    #[error("invalid value: {0}")]
    InvalidValue(String),

    #[error("episode budget too small: {budget} < required {required}")]
    BudgetTooSmall { budget: u64, required: u64 },

    #[error("degenerate dropout vector: probability of at most two dropouts is zero")]
    DegenerateDropout,

    #[error("problem too large for exhaustive evaluation: {size} > {limit}")]
    TooLarge { size: usize, limit: usize },

    #[error("incomplete return table: {0}")]
    IncompleteTable(String),

    #[error("oracle failure: {0}")]
    Oracle(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// True for errors caused by malformed or unreadable input, as opposed to
    /// well-formed input that describes an unsolvable or degenerate problem.
    pub fn is_input_error(&self) -> bool {
        !matches!(
            self,
            Error::DegenerateDropout | Error::TooLarge { .. } | Error::Oracle(_)
        )
    }
}
