use std::io;
use std::path::Path;

use serde_json::json;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{path}:{line}:{column}: {message}")]
    Format { path: String, line: u64, column: usize, message: String },

    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io { path: String, source: io::Error },

    #[error(transparent)]
    Core(#[from] roomsi_core::Error),
}

pub type CliResult<T> = std::result::Result<T, CliError>;

impl CliError {
    pub fn io(path: &Path, source: io::Error) -> Self {
        Self::Io { path: path.display().to_string(), source }
    }

    pub fn kind(&self) -> String {
        match self {
            Self::Format { .. } => "FormatError".into(),
            Self::Config(_) => "ConfigError".into(),
            Self::Io { .. } => "IoError".into(),
            Self::Core(e) => {
                let debug = format!("{e:?}");
                debug.split(|c: char| !c.is_alphanumeric()).next().unwrap_or_default().to_string()
            }
        }
    }

    /// One-line JSON object for stderr.
    pub fn to_json(&self) -> serde_json::Value {
        let mut v = json!({ "error": self.kind(), "message": self.to_string() });
        if let Self::Format { path, line, column, .. } = self {
            v["path"] = json!(path);
            v["line"] = json!(line);
            v["column"] = json!(column);
        }
        v
    }
}
