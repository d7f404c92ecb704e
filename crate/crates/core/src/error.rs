use thiserror::Error;

/// Errors raised anywhere in the fine-tuning stack.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: &'static str, detail: String },

    #[error("matrix contains NaN or infinite entries")]
    NonFinite,

    #[error("invalid dimensions {rows}x{cols}")]
    InvalidDimensions { rows: usize, cols: usize },

    #[error("SVD did not converge within {sweeps} sweeps")]
    NoConvergence { sweeps: usize },

    #[error("covariance needs at least 2 samples, got {0}")]
    TooFewSamples(usize),

    #[error("domain error in {op}: {detail}")]
    DomainError { op: &'static str, detail: String },

    #[error("loss must be a 1x1 node, got {rows}x{cols}")]
    NotScalarLoss { rows: usize, cols: usize },

    #[error("row {row} is not a probability vector (sum {sum})")]
    NotDistribution { row: usize, sum: f64 },

    #[error("all singular values are zero")]
    ZeroMatrix,

    #[error("rank {rank} exceeds min(m, n) = {max}")]
    RankTooLarge { rank: usize, max: usize },

    #[error("invalid configuration: {0}")]
    ConfigInvalid(String),

    #[error("malformed file: {0}")]
    Format(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::ShapeMismatch {
        op,
        detail: detail.into(),
    }
}
