use sysid_core::error::CheckpointError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("runtime error: {0}")]
    Runtime(String),
    #[error("I/O error: {0}")]
    Io(String),
}

impl CliError {
    /// Process exit status: 1 configuration, 2 runtime/numeric, 3 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Self::Config(_) => 1,
            Self::Runtime(_) => 2,
            Self::Io(_) => 3,
        }
    }
}

impl From<sysid_core::Error> for CliError {
    fn from(e: sysid_core::Error) -> Self {
        match e {
            sysid_core::Error::Config(m) => Self::Config(m),
            sysid_core::Error::Checkpoint(c) => c.into(),
            other => Self::Runtime(other.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        match &e {
            CheckpointError::Invalid { field, .. } if field == "config" => Self::Config(e.to_string()),
            _ => Self::Io(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Io(e.to_string())
    }
}
