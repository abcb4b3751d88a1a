use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("kernel PCA needs {requested} components but found positive eigenvalues: {available}")]
    InsufficientEigenvalues { requested: usize, available: usize },

    #[error("training diverged at epoch {epoch} (non-finite loss)")]
    Diverged { epoch: usize, trace: Vec<f64> },

    #[error("integration produced a non-finite state at t = {time}")]
    BlowUp { time: f64 },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub(crate) fn dim(msg: impl Into<String>) -> Self {
        Error::Dimension(msg.into())
    }

    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidArgument(msg.into())
    }
}
