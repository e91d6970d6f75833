use thiserror::Error;

#[derive(Debug, Error)]
pub enum DiffError {
    #[error("shape error: {0}")]
    Shape(String),

    #[error("invalid layer {index} ({kind}): {reason}")]
    InvalidLayer {
        index: usize,
        kind: &'static str,
        reason: String,
    },

    #[error("non-finite value in {stage} of layer {layer}")]
    NonFinite { stage: &'static str, layer: usize },

    #[error("backward called before forward")]
    BackwardBeforeForward,

    #[error("graph is in {actual:?} mode, operation requires {required:?}")]
    ModeMismatch {
        required: crate::graph::Mode,
        actual: crate::graph::Mode,
    },

    #[error("empty batch")]
    EmptyBatch,

    #[error("label {label} out of range for {classes} classes")]
    InvalidLabel { label: usize, classes: usize },

    #[error("weight store: {0}")]
    Store(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = DiffError> = std::result::Result<T, E>;
