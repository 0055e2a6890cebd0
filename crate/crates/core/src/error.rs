//! Error type shared by every module in the crate.

/// Unified error for tensor, graph, data, and verification operations.
#[derive(Debug, thiserror::Error)]
pub enum CoreError {
    /// Two operands have incompatible shapes for the named operation.
    #[error("{op}: shape mismatch between {lhs:?} and {rhs:?}")]
    ShapeMismatch {
        op: &'static str,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A temporal kernel is longer than the sequence it is applied to.
    #[error("kernel length {kernel} exceeds temporal extent {extent}")]
    KernelTooLong { kernel: usize, extent: usize },

    /// Backward was requested from a tensor that is not a scalar.
    #[error("backward requires a scalar loss, got shape {shape:?}")]
    NotScalar { shape: Vec<usize> },

    /// An optimizer step found a parameter without an accumulated gradient.
    #[error("parameter {name} has no gradient; run backward first")]
    MissingGrad { name: String },

    /// A NaN or infinity surfaced where only finite values are allowed.
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    /// A configuration field failed validation.
    #[error("invalid config: {0}")]
    InvalidConfig(String),

    /// A dataset or split ended up with no usable samples.
    #[error("empty dataset: {0}")]
    EmptyDataset(String),

    /// Normalization cannot be fit because min equals max.
    #[error("degenerate value range: min == max == {0}")]
    DegenerateRange(f64),

    /// A mathematical function was called outside its domain.
    #[error("domain error: {0}")]
    Domain(String),

    /// A file did not match the expected on-disk format.
    #[error("format error: {0}")]
    Format(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, CoreError>;
