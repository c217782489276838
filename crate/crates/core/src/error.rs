use thiserror::Error;

/// Errors produced by the barycenter solvers and their supporting modules.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("invalid option: {0}")]
    InvalidOption(String),

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    /// Underflow, overflow or a zero denominator inside a scaling iteration.
    #[error("numerical instability: {0}")]
    Instability(String),

    #[error("instance too large for the exact LP solver: {variables} variables (limit {limit})")]
    TooLarge { variables: usize, limit: usize },

    #[error("LP solver failure: {0}")]
    Lp(String),

    #[error("inner solve failed at outer iteration {outer}: {source}")]
    Inner {
        outer: usize,
        #[source]
        source: Box<Error>,
    },

    /// Malformed input file; `line` and `column` are 1-based.
    #[error("{origin}:{line}:{column}: {message}")]
    Parse {
        origin: String,
        line: usize,
        column: usize,
        message: String,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
