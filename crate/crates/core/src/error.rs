use std::io;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] io::Error),

    #[error("malformed tensor header: {0}")]
    Header(String),

    #[error("unsupported dtype {0:?} (only \"f64\" is supported)")]
    Dtype(String),

    #[error("payload length mismatch: expected {expected} bytes, found {found}")]
    PayloadLength { expected: usize, found: usize },

    #[error("invalid shape {shape:?}: {reason}")]
    Shape { shape: Vec<usize>, reason: String },

    #[error("invalid pooling geometry: {0}")]
    Geometry(String),

    #[error("invalid moment spec: {0}")]
    Spec(String),

    #[error(
        "order {order} requires normalization of moments >= 3; pass an explicit unsafe opt-in to run unnormalized"
    )]
    UnnormalizedGuard { order: usize },

    #[error("empty input: {0}")]
    Empty(&'static str),

    #[error("batch norm in training mode needs batch size >= 2, got {0}")]
    BatchTooSmall(usize),

    #[error("forward operator is not deterministic (two evaluations differ at flat index {0})")]
    NonDeterministic(usize),
}

impl Error {
    pub(crate) fn shape(shape: &[usize], reason: impl Into<String>) -> Self {
        Error::Shape {
            shape: shape.to_vec(),
            reason: reason.into(),
        }
    }
}
