use thiserror::Error;

/// Errors shared by all modules of the crate.
#[derive(Debug, Error)]
pub enum Error {
    /// Incompatible shapes between two operands, or an input of the wrong length.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A caller-supplied argument violates a precondition.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// An operation that needs at least one sample got none.
    #[error("empty dataset")]
    EmptyDataset,

    /// Malformed on-disk data (bad magic, truncated payload, out-of-range label, ...).
    #[error("format error: {0}")]
    Format(String),

    /// The tangent identity `grad_theta f = S x` only holds for biasless networks.
    #[error("tangent identity requires a biasless network")]
    LemmaNotApplicable,

    /// Full-batch gradient descent increased the training loss; the step size is too large
    /// for the descent guarantee the trajectory bookkeeping relies on.
    #[error("training loss increased at step {step} ({prev} -> {next}); reduce the learning rate")]
    DivergingStep { step: usize, prev: f64, next: f64 },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }

    pub(crate) fn format(msg: impl Into<String>) -> Self {
        Error::Format(msg.into())
    }
}
