use std::path::PathBuf;

/// Errors raised across the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("invalid parameters: {0}")]
    InvalidParams(String),
    #[error("point lies in the singular set: {0}")]
    SingularPoint(String),
    #[error("degenerate bond between points {0} and {1}")]
    DegenerateBond(usize, usize),
    #[error("degenerate bond angle at vertex {0}")]
    DegenerateAngle(usize),
    #[error("gimbal degeneracy at point {0}")]
    GimbalDegeneracy(usize),
    #[error("degenerate time {0}: sigma is zero")]
    DegenerateTime(String),
    #[error("non-finite state at step {step}: {detail}")]
    NonFiniteState { step: usize, detail: String },
    #[error("non-finite loss at training step {0}")]
    NonFiniteLoss(usize),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("input too large: {0}")]
    TooLarge(String),
    #[error("schema error at line {line}: {msg}")]
    Schema { line: usize, msg: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error("checkpoint version mismatch: found {found}, expected {expected}")]
    VersionMismatch { found: u32, expected: u32 },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io { path: path.into(), source }
    }
}
