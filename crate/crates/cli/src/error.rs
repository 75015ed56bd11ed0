use std::fmt;
use std::io;
use std::path::Path;

use regime_stop::model::ValidationError;
use serde_json::{json, Value};

/// Failure of a run. Rendered as a one-line JSON object on stderr.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Io { path: String, message: String },
    Config { origin: String, message: String },
    Validation(ValidationError),
    /// Error from a core computation; its message starts with the error name.
    Compute(String),
}

impl CliError {
    pub fn io(path: &Path, e: io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        }
    }

    pub fn compute(e: impl fmt::Display) -> Self {
        Self::Compute(e.to_string())
    }

    pub fn kind(&self) -> &str {
        match self {
            Self::Usage(_) => "Usage",
            Self::Io { .. } => "Io",
            Self::Config { .. } => "Config",
            Self::Validation(_) => "InvalidParameters",
            Self::Compute(m) => m.split(':').next().unwrap_or("Compute"),
        }
    }

    pub fn diagnostic(&self) -> Value {
        let mut d = json!({
            "schema": crate::output::schema("error"),
            "error": self.kind(),
            "message": self.to_string(),
        });
        if let Self::Validation(v) = self {
            d["violations"] = json!(v.violations);
        }
        d
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Usage(m) | Self::Compute(m) => f.write_str(m),
            Self::Io { path, message } => write!(f, "{path}: {message}"),
            Self::Config { origin, message } => write!(f, "{origin}: {message}"),
            Self::Validation(v) => write!(f, "{v}"),
        }
    }
}

impl From<ValidationError> for CliError {
    fn from(e: ValidationError) -> Self {
        Self::Validation(e)
    }
}
