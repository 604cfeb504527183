use thiserror::Error;

pub type Result<T, E = CvsError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CvsError {
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    /// Malformed or truncated file content. `offset` is the byte position
    /// where the problem was detected.
    #[error("format error at byte {offset}: {message}")]
    Format { offset: u64, message: String },

    #[error("geometry mismatch: {0}")]
    Geometry(String),

    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    /// An iterative solver produced non-finite iterates or failed to
    /// converge within its cap.
    #[error("numeric divergence: {0}")]
    Divergence(String),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl CvsError {
    pub(crate) fn format(offset: u64, message: impl Into<String>) -> Self {
        CvsError::Format {
            offset,
            message: message.into(),
        }
    }

    /// Process exit code used by the command-line tool.
    pub fn exit_code(&self) -> i32 {
        match self {
            CvsError::Io(_) => 1,
            CvsError::Divergence(_) | CvsError::NonFinite(_) => 3,
            CvsError::Format { .. }
            | CvsError::Geometry(_)
            | CvsError::Dimension(_)
            | CvsError::Config(_)
            | CvsError::Json(_) => 2,
        }
    }
}
