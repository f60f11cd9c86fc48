use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum VigorError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("sequence of length {len} exceeds context length {max}")]
    Length { len: usize, max: usize },
    #[error("domain error: {0}")]
    Domain(String),
    #[error("group size {0} is too small (need at least 2)")]
    GroupSize(usize),
    #[error("numeric error: {0}")]
    Numeric(String),
    #[error("analysis error: {0}")]
    Analysis(String),
    #[error("format error: {0}")]
    Format(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, VigorError>;
