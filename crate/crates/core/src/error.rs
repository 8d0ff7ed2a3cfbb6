use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("input `{0}` does not have orthonormal columns (residual {1:.3e})")]
    NotOrthonormal(&'static str, f64),

    #[error("matrix `{0}` is rank deficient")]
    RankDeficient(&'static str),

    #[error("incremental QR update produced a rank-deficient factor (|r_ii| = {0:.3e})")]
    RankDeficientUpdate(f64),

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error("function has zero norm on the data")]
    ZeroFunction,

    #[error("negative radicand {radicand:.6e} at state ({x1}, {x2})")]
    NegativeRadicand { radicand: f64, x1: f64, x2: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("naive and fast pruning disagree: {0}")]
    Divergence(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Parse(e.to_string())
    }
}
