use std::fmt;

/// Errors produced by the library.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch in {op}: {shapes}")]
    ShapeMismatch { op: &'static str, shapes: String },

    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),

    #[error("non-finite adjoint at node {node} ({op})")]
    NonFiniteAdjoint { node: usize, op: &'static str },

    #[error("non-finite value produced by {op} at node {node}")]
    NonFiniteValue { node: usize, op: &'static str },

    #[error("function under test is not deterministic: {0}")]
    NonDeterministic(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("no gradient path: {0}")]
    NoGradientPath(String),

    #[error("chart has not been built")]
    UnvisitedChart,

    #[error("format error: {0}")]
    Format(String),

    #[error("checkpoint checksum mismatch (stored {stored:#010x}, computed {computed:#010x})")]
    Checksum { stored: u32, computed: u32 },

    #[error("unsupported checkpoint version {0}")]
    Version(u32),

    #[error("training diverged: {0}")]
    Diverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, shapes: impl fmt::Display) -> Error {
    Error::ShapeMismatch {
        op,
        shapes: shapes.to_string(),
    }
}

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
