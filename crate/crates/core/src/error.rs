use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("softmax row {row} has no attendable position")]
    FullyMasked { row: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("failed to allocate {bytes} bytes")]
    Alloc { bytes: usize },

    #[error("non-finite value encountered: {0}")]
    NonFinite(String),
}

impl Error {
    pub(crate) fn shape(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Shape {
            op,
            detail: detail.into(),
        }
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }
}
