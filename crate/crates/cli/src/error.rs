use covlab_core::Error;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}: {message}")]
    Data { path: String, message: String },

    #[error(transparent)]
    Core(#[from] Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn data(path: impl AsRef<std::path::Path>, message: impl ToString) -> Self {
        CliError::Data {
            path: path.as_ref().display().to_string(),
            message: message.to_string(),
        }
    }

    /// 1 usage, 2 data, 3 training.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data { .. } => 2,
            CliError::Core(e) => match e {
                Error::Config(_) => 1,
                Error::Training { .. } | Error::AllCandidatesFailed(_) | Error::NonFiniteGradient { .. } => 3,
                _ => 2,
            },
        }
    }
}
