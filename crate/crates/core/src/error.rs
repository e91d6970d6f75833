use advkit_diff::DiffError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Engine(#[from] DiffError),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("channel {channel} of epoch {epoch} has zero variance")]
    ZeroVariance { epoch: usize, channel: String },
    #[error("group {group} mixes labels {first} and {other}")]
    MixedLabels { group: usize, first: i16, other: i16 },
    #[error("group {group} has {size} epochs, expected {expected}")]
    IncompleteGroup { group: usize, size: usize, expected: usize },
    #[error("class {class} has no examples")]
    EmptyClass { class: usize },
    #[error("covariance for class {class} is singular even after regularization")]
    SingularCovariance { class: usize },
    #[error("training diverged at epoch {epoch}: {reason}")]
    Divergence { epoch: usize, reason: String },
    #[error("query budget of {budget} labels exceeded ({requested} requested)")]
    QueryBudget { budget: usize, requested: usize },
    #[error("no misclassified adversarial examples to group")]
    EmptyGroups,
    #[error("bad magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("unsupported container version {0}")]
    UnsupportedVersion(u16),
    #[error("truncated container: {0}")]
    Truncated(String),
    #[error("header/payload mismatch: {0}")]
    CountMismatch(String),
    #[error("invalid header: {0}")]
    Header(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn invalid(msg: impl Into<String>) -> Error {
    Error::InvalidArgument(msg.into())
}
