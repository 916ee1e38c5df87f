use std::path::PathBuf;

/// Operational failures. Low success rates are never errors.
#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid config {}: {field}: {message}", path.display())]
    ConfigInvalid {
        path: PathBuf,
        field: String,
        message: String,
    },
    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("checksum mismatch for {}", path.display())]
    ChecksumMismatch { path: PathBuf },
    #[error("checkpoint {} is incompatible with the config: {detail}", path.display())]
    CheckpointIncompatible { path: PathBuf, detail: String },
    #[error("{}: unknown format at byte {offset}: {reason}", path.display())]
    UnknownFormat {
        path: PathBuf,
        offset: u64,
        reason: String,
    },
    #[error("output directory {} is locked by another run (remove {} if stale)", dir.display(), lock.display())]
    Locked { dir: PathBuf, lock: PathBuf },
    #[error("invalid argument: {0}")]
    Usage(String),
    #[error(transparent)]
    Failed(#[from] anyhow::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn config(
        path: impl Into<PathBuf>,
        field: impl Into<String>,
        message: impl ToString,
    ) -> Self {
        CliError::ConfigInvalid {
            path: path.into(),
            field: field.into(),
            message: message.to_string(),
        }
    }

    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Failed(_) => 1,
            CliError::ConfigInvalid { .. } | CliError::Usage(_) => 2,
            CliError::Io { .. } => 3,
            CliError::ChecksumMismatch { .. } => 4,
            CliError::CheckpointIncompatible { .. } => 5,
            CliError::UnknownFormat { .. } => 6,
            CliError::Locked { .. } => 7,
        }
    }

    /// Stable machine-readable name.
    pub fn kind(&self) -> &'static str {
        match self {
            CliError::ConfigInvalid { .. } => "ConfigInvalid",
            CliError::Io { .. } => "IoError",
            CliError::ChecksumMismatch { .. } => "ChecksumMismatch",
            CliError::CheckpointIncompatible { .. } => "CheckpointIncompatible",
            CliError::UnknownFormat { .. } => "UnknownFormat",
            CliError::Locked { .. } => "Locked",
            CliError::Usage(_) => "Usage",
            CliError::Failed(_) => "Failed",
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
