use thiserror::Error;

/// Errors produced by the library.
#[derive(Debug, Error)]
pub enum Error {
    /// Tensor or vector dimensions do not line up.
    #[error("shape mismatch: {0}")]
    Shape(String),

    /// A numeric input contained NaN or infinity.
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// The caller violated an API precondition.
    #[error("usage error: {0}")]
    Usage(String),

    /// The requested feature exists in the problem domain but is not supported here.
    #[error("unsupported: {0}")]
    Capability(String),

    /// Training produced a non-finite loss.
    #[error("training diverged at epoch {epoch}: {detail}")]
    Diverged { epoch: usize, detail: String },

    /// A data file failed to parse.
    #[error("parse error at {path}:{line}: {msg}")]
    Parse {
        path: String,
        line: usize,
        msg: String,
    },

    /// A model archive is damaged or incompatible.
    #[error("archive error: {0}")]
    Archive(String),

    /// Label-space refinement hit a non-finite energy; the partial trace is attached.
    #[error("refinement produced non-finite energy after {} steps", trace.len())]
    NonFiniteEnergy { trace: Vec<f64> },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }

    pub(crate) fn usage(msg: impl Into<String>) -> Self {
        Error::Usage(msg.into())
    }
}
