use thiserror::Error;

/// Errors raised by the numerical kernels and the checkpoint container layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("mode {mode} out of range for tensor of order {order}")]
    ModeOutOfRange { mode: usize, order: usize },

    #[error("rank {rank} out of range for mode {mode} (must be in 1..={bound})")]
    RankOutOfRange { mode: usize, rank: usize, bound: usize },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("SVD did not converge after {0} iterations")]
    NoConvergence(usize),

    #[error("invalid options: {0}")]
    InvalidOptions(String),

    #[error("invalid layer weights: {0}")]
    InvalidWeights(String),

    #[error("malformed container: {0}")]
    Format(String),

    #[error("tensor `{name}` is out of bounds: {detail}")]
    OutOfBounds { name: String, detail: String },

    #[error("unknown dtype `{0}`")]
    UnknownDtype(String),

    #[error("tensor `{0}` not found in container")]
    MissingTensor(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
