use lorp::LorpError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("usage: {0}")]
    Usage(String),

    #[error("data: {0}")]
    Data(String),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Core(#[from] LorpError),

    #[error("every candidate failed")]
    AllFailed,
}

impl CliError {
    /// Process exit status: 1 usage, 2 data, 3 all candidates failed.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Io(_) | CliError::Core(_) => 2,
            CliError::AllFailed => 3,
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
