use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("window of {window} past steps needs {needed} observations, trajectory has {have}")]
    ShortTrajectory {
        window: usize,
        needed: usize,
        have: usize,
    },

    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("non-finite value produced by {0}")]
    NonFinite(&'static str),

    #[error("observation cannot be mapped back to a simulator state: {0}")]
    Reconstruction(String),

    #[error("invalid parameter `{name}`: {reason}")]
    InvalidParam { name: String, reason: String },

    #[error("degenerate normalization: expert return {expert} does not exceed zero-policy return {zero}")]
    DegenerateScore { expert: f64, zero: f64 },

    #[error("matrix is not positive definite even after ridge {0:e}")]
    NotPositiveDefinite(f64),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
