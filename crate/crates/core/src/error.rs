use alloc::string::String;

/// Errors raised by the numerical core.
#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum Error {
    #[error("shape mismatch at node {node}: {detail}")]
    ShapeMismatch { node: String, detail: String },

    #[error("input `{0}` is not bound")]
    UnboundInput(String),

    #[error("backward requires a scalar output, node {node} has shape {shape}")]
    NonScalarOutput { node: String, shape: String },

    #[error("non-finite value produced at {0}")]
    NonFinite(String),

    #[error("length mismatch: expected {expected}, got {actual}")]
    LengthMismatch { expected: usize, actual: usize },

    #[error("invalid tensor: {0}")]
    InvalidTensor(String),

    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    #[error("label {label} out of range for {n_classes} classes")]
    LabelOutOfRange { label: usize, n_classes: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("segment too short: {0}")]
    SegmentTooShort(String),

    #[error("scorer mode mismatch: {0}")]
    ModeMismatch(String),

    #[error("head index {index} out of range 1..={d}")]
    HeadIndex { index: usize, d: usize },

    #[error(
        "normal equations are rank deficient ({rows} rows, {cols} unknowns); use a ridge coefficient > 0 (e.g. 1e-3)"
    )]
    RankDeficient { rows: usize, cols: usize },

    #[error("zero-norm row {row} at node {node}")]
    ZeroNorm { node: String, row: usize },

    #[error("zero-norm attention vector for paired sample {0}")]
    ZeroNormAttention(usize),

    #[error("vacuous bound: robustness constant is zero")]
    VacuousBound,

    #[error("zero variance: {0}")]
    ZeroVariance(String),

    #[error("no class has both positive and negative examples")]
    DegenerateClasses,

    #[error("method `{method}` failed: {message}")]
    MethodFailed { method: String, message: String },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("domain error: {0}")]
    Domain(String),
}

pub type Result<T> = core::result::Result<T, Error>;
