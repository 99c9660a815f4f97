use std::path::PathBuf;

/// Failure of a subcommand. Each variant maps to a fixed process exit code.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    External(String),
    #[error("{0}")]
    Training(String),
    #[error("{0}")]
    Checkpoint(String),
    #[error("{reason} (partial transcript: {})", partial.display())]
    RunAborted { reason: String, partial: PathBuf },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::External(_) => 2,
            CliError::Training(_) => 3,
            CliError::Checkpoint(_) => 4,
            CliError::RunAborted { .. } => 5,
        }
    }

    pub(crate) fn io(path: &std::path::Path, e: std::io::Error) -> Self {
        CliError::Usage(format!("{}: {e}", path.display()))
    }
}
