use std::fmt;

use serde_json::json;

/// Process exit code for malformed or invalid configuration.
pub const EXIT_CONFIG: i32 = 2;
/// Process exit code for numerical failures (fits, reconstruction).
pub const EXIT_NUMERICAL: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Invalid configuration; `path` names the offending field when known.
    Config { path: Option<String>, message: String },
    Io { path: String, message: String },
    Core {
        context: &'static str,
        source: bellgen_core::Error,
        /// File name and contents written next to the reports on failure.
        diagnostics: Option<(String, String)>,
    },
}

impl CliError {
    pub fn config(path: impl Into<String>, message: impl fmt::Display) -> Self {
        CliError::Config {
            path: Some(path.into()),
            message: message.to_string(),
        }
    }

    pub fn core(context: &'static str) -> impl FnOnce(bellgen_core::Error) -> Self {
        move |source| CliError::Core {
            context,
            source,
            diagnostics: None,
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config { .. } | CliError::Io { .. } => EXIT_CONFIG,
            CliError::Core { source, .. } if source.is_input_error() => EXIT_CONFIG,
            CliError::Core { .. } => EXIT_NUMERICAL,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config { .. } => "config",
            CliError::Io { .. } => "io",
            CliError::Core { source, .. } => match source {
                bellgen_core::Error::Validation(_) => "validation",
                bellgen_core::Error::Degenerate(_) => "degenerate",
                bellgen_core::Error::Unreachable { .. } => "unreachable",
                bellgen_core::Error::Fit { .. } => "fit",
                bellgen_core::Error::Reconstruction(_) => "reconstruction",
            },
        }
    }

    /// Single-line machine-readable form written to stderr.
    pub fn to_json(&self) -> String {
        let path = match self {
            CliError::Config { path, .. } => path.clone(),
            CliError::Io { path, .. } => Some(path.clone()),
            CliError::Core { context, .. } => Some((*context).to_string()),
        };
        json!({
            "error": {
                "kind": self.kind(),
                "message": self.to_string(),
                "path": path,
                "exit_code": self.exit_code(),
            }
        })
        .to_string()
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Config { path: Some(p), message } => write!(f, "{p}: {message}"),
            CliError::Config { path: None, message } => f.write_str(message),
            CliError::Io { path, message } => write!(f, "{path}: {message}"),
            CliError::Core { context, source, .. } => write!(f, "{context}: {source}"),
        }
    }
}

impl std::error::Error for CliError {}
