use std::path::PathBuf;

use thiserror::Error;

/// Failures reported by the command-line tool. Every variant maps to a
/// stable machine-readable code.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),

    #[error("{0}")]
    Config(String),

    /// Recorded outputs whose content changed.
    #[error("outputs differ from the manifest: {}", .0.join(", "))]
    Mismatch(Vec<String>),

    /// Artifacts a command needs, each with where it was looked for.
    #[error("missing {}", list_missing(.0))]
    MissingPrerequisite(Vec<(String, PathBuf)>),

    /// Sample ids without a prediction, as `method/id`.
    #[error("no prediction under {} for {}", .root.display(), .entries.join(", "))]
    MissingPredictions { root: PathBuf, entries: Vec<String> },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Core(#[from] patchfusion::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn code(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Config(_) => "config",
            CliError::Mismatch(_) => "mismatch",
            CliError::MissingPrerequisite(_) => "missing_prerequisite",
            CliError::MissingPredictions { .. } => "missing_prediction",
            CliError::Io { .. } => "io",
            CliError::Core(e) => match e {
                patchfusion::Error::Missing(_) => "missing_prerequisite",
                patchfusion::Error::Io { .. } => "io",
                patchfusion::Error::Diverged { .. } => "diverged",
                patchfusion::Error::Infeasible(_) => "infeasible",
                patchfusion::Error::Format(_) | patchfusion::Error::Json(_) => "format",
                _ => "invalid_input",
            },
            CliError::Json(_) => "format",
        }
    }

    /// Single-line JSON rendering for stderr.
    pub fn to_json_line(&self) -> String {
        serde_json::json!({ "error": self.code(), "message": self.to_string() }).to_string()
    }
}

fn list_missing(items: &[(String, PathBuf)]) -> String {
    items
        .iter()
        .map(|(what, path)| format!("{what} ({})", path.display()))
        .collect::<Vec<_>>()
        .join(", ")
}

pub type Result<T> = std::result::Result<T, CliError>;
