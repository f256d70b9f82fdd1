use thiserror::Error;

pub type Result<T> = std::result::Result<T, PulseError>;

#[derive(Debug, Error)]
pub enum PulseError {
    /// A tensor axis did not have the size an op required.
    #[error("{op}: dimension mismatch on {axis}: expected {expected}, got {got}")]
    Dimension {
        op: &'static str,
        axis: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("{op}: expected rank {expected}, got rank {got}")]
    Rank {
        op: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    /// Non-finite values appeared in the output of a named layer.
    #[error("numeric failure: non-finite values in layer `{layer}`")]
    NumericFailure { layer: String },

    #[error("non-finite training loss at epoch {epoch}, batch {batch}")]
    NanLoss { epoch: usize, batch: usize },

    #[error("format error: {0}")]
    Format(String),

    #[error("dataset error: {0}")]
    Data(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl PulseError {
    pub(crate) fn dim(op: &'static str, axis: &'static str, expected: usize, got: usize) -> Self {
        PulseError::Dimension {
            op,
            axis,
            expected,
            got,
        }
    }
}
