use std::path::PathBuf;

/// Failure of a CLI command, already classified by exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    /// Bad flags or flag combinations. Exit 1.
    #[error("{0}")]
    Usage(String),
    /// Input that parses badly or fails validation. Exit 2.
    #[error("{0}")]
    Data(String),
    /// File system trouble. Exit 2.
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    /// A broken engine invariant. Exit 3.
    #[error("{0}")]
    Internal(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Data(_) | CliError::Io { .. } => 2,
            CliError::Internal(_) => 3,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }
}

impl From<semdec::Error> for CliError {
    fn from(e: semdec::Error) -> Self {
        if e.is_internal() {
            CliError::Internal(e.to_string())
        } else {
            CliError::Data(e.to_string())
        }
    }
}

impl From<semdec::error::ConfigError> for CliError {
    fn from(e: semdec::error::ConfigError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<semdec::error::SynthError> for CliError {
    fn from(e: semdec::error::SynthError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Internal(format!("serialization failed: {e}"))
    }
}

pub type CliResult<T> = Result<T, CliError>;
