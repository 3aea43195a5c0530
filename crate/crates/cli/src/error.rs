use std::path::PathBuf;

use serde::Serialize;

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] jmfusion_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{0}")]
    Config(String),
    #[error("{path}: {msg}")]
    Format { path: PathBuf, msg: String },
    #[error("output directory {dir} is locked by another run ({holder})")]
    Locked { dir: PathBuf, holder: String },
    #[error("{0}")]
    Missing(String),
    #[error("{0}")]
    Usage(String),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }

    pub fn format(path: impl Into<PathBuf>, msg: impl ToString) -> Self {
        CliError::Format { path: path.into(), msg: msg.to_string() }
    }

    pub fn kind(&self) -> &'static str {
        match self {
            CliError::Core(jmfusion_core::Error::Config(_)) => "config",
            CliError::Core(jmfusion_core::Error::Diverged { .. }) => "diverged",
            CliError::Core(_) => "invalid-input",
            CliError::Io { .. } => "io",
            CliError::Config(_) => "config",
            CliError::Format { .. } => "format",
            CliError::Locked { .. } => "locked",
            CliError::Missing(_) => "missing-input",
            CliError::Usage(_) => "usage",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Config(_) | CliError::Core(jmfusion_core::Error::Config(_)) => 2,
            CliError::Locked { .. } => 3,
            _ => 1,
        }
    }

    /// One-line JSON object for stderr.
    pub fn to_json(&self, command: &str) -> String {
        #[derive(Serialize)]
        struct Out<'a> {
            error: &'a str,
            message: String,
            command: &'a str,
            exit_code: i32,
        }
        serde_json::to_string(&Out { error: self.kind(), message: self.to_string(), command, exit_code: self.exit_code() })
            .expect("plain struct serializes")
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Format { path: PathBuf::from("<json>"), msg: e.to_string() }
    }
}
