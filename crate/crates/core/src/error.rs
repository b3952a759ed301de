use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter `{field}`: {reason}")]
    Parameter { field: &'static str, reason: String },

    #[error("value out of range: {0}")]
    Range(String),

    #[error("start site {site} is not usable: {reason}")]
    Start { site: usize, reason: &'static str },

    #[error("site {0} is not on the solved cluster")]
    OffCluster(usize),

    #[error("conjugate gradient did not converge in {iters} iterations (residual {residual:e})")]
    Solver { iters: usize, residual: f64 },

    #[error("paths do not share a jump skeleton: {0}")]
    Skeleton(String),

    #[error("{jumps} jumps exceed the exact-method cap of {cap}; use the greedy or capped method")]
    ExactCap { jumps: usize, cap: usize },

    #[error("malformed input: {0}")]
    Format(String),

    #[error("integrity check failed: {0}")]
    Integrity(String),

    #[error("configuration error at `{key}`: {reason}")]
    Config { key: String, reason: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn param(field: &'static str, reason: impl Into<String>) -> Error {
    Error::Parameter { field, reason: reason.into() }
}
