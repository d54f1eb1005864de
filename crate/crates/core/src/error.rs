use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {what}: expected {expected}, got {got}")]
    DimensionMismatch {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("sequence too short: need at least {needed} samples, got {got}")]
    TooShort { needed: usize, got: usize },

    #[error("matrix is not positive definite ({0})")]
    NotPositiveDefinite(&'static str),

    #[error("stacked data matrix lost full row rank (sigma_min = {sigma_min:e}); try a smaller noise bound")]
    RankCollapse { sigma_min: f64 },

    #[error("no feasible point found for the worst-case problem: {0}")]
    NoFeasiblePoint(String),

    #[error("infeasible: {0}")]
    Infeasible(String),

    #[error("degenerate data: {0}")]
    Degenerate(String),

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(what: &'static str, expected: usize, got: usize) -> Self {
        Error::DimensionMismatch {
            what,
            expected,
            got,
        }
    }

    /// True for the failures the CLI maps to the "infeasible" exit code.
    pub fn is_infeasible(&self) -> bool {
        matches!(self, Error::Infeasible(_) | Error::NoFeasiblePoint(_))
    }
}

pub type Result<T> = std::result::Result<T, Error>;
