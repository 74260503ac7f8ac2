use thiserror::Error;

pub type BenchResult<T> = std::result::Result<T, BenchError>;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Core(#[from] lsattn_core::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("preset: {0}")]
    Preset(String),

    /// Bad flags or an invalid request; the CLI exits with status 2.
    #[error("{0}")]
    Usage(String),

    /// An invariant did not hold; the CLI exits with status 1.
    #[error("invariant failed: {0}")]
    Invariant(String),
}
