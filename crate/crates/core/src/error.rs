use thiserror::Error;

use crate::autodiff::{NodeId, OpKind};
use crate::training::RunRecord;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("variable {0} has no bound value")]
    UnboundVariable(NodeId),

    #[error("node {node} ({op}) produced a non-finite value")]
    NonFinite { node: NodeId, op: OpKind },

    #[error("shape mismatch in {op}: {detail}")]
    ShapeMismatch { op: OpKind, detail: String },

    #[error("node {0} is not a scalar")]
    NotScalar(NodeId),

    #[error("node {0} is not a variable")]
    NotVariable(NodeId),

    #[error("gradient requested with respect to an empty variable set")]
    EmptyWrt,

    #[error("{0} must not be empty")]
    Empty(&'static str),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("{0} has no dual norm")]
    NoDual(crate::geometry::NormOrder),

    #[error("gradient norm {norm:e} is below the margin denominator floor")]
    VanishingGradient { norm: f64 },

    #[error("interpolation weight {0} is outside [0, 1]")]
    InvalidAlpha(f64),

    #[error("relativistic objectives need a real batch")]
    MissingRealBatch,

    #[error("batches must pair up: {real} real vs {fake} fake samples")]
    UnpairedBatches { real: usize, fake: usize },

    #[error("no sign change of the model found in the search box")]
    NoSignChange,

    #[error("sample sets must have equal size ({p} vs {q})")]
    UnequalSampleCounts { p: usize, q: usize },

    #[error("need at least {needed} samples, got {got}")]
    TooFewSamples { needed: usize, got: usize },

    #[error("dataset is not linearly separable")]
    NotSeparable,

    #[error("invalid value for `{field}`: {reason}")]
    InvalidConfig { field: String, reason: String },

    #[error("training diverged at iteration {iteration}: {cause}")]
    Diverged {
        iteration: usize,
        cause: String,
        record: Box<RunRecord>,
    },

    #[error("malformed model file: {0}")]
    ModelFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn config(field: impl Into<String>, reason: impl Into<String>) -> Self {
        Error::InvalidConfig {
            field: field.into(),
            reason: reason.into(),
        }
    }
}
