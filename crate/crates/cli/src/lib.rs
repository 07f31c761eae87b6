//! Library side of the `bellgen` command-line tool: config loading,
//! the subcommand pipelines and canonical report rendering.

pub mod commands;
pub mod config;
pub mod error;
pub mod report;

use std::path::{Path, PathBuf};

pub use commands::{Command, Outcome};
pub use error::CliError;

pub const OUT_DIR_ENV: &str = "BELLGEN_OUT_DIR";

/// `--out` beats the environment variable, which beats `output_dir` in
/// the config; the fallback is `bellgen-out`.
pub fn resolve_out_dir(flag: Option<&Path>, env: Option<&str>, config: Option<&Path>) -> PathBuf {
    flag.map(Path::to_path_buf)
        .or_else(|| env.filter(|s| !s.is_empty()).map(PathBuf::from))
        .or_else(|| config.map(Path::to_path_buf))
        .unwrap_or_else(|| PathBuf::from("bellgen-out"))
}

/// Writes the report, CSV and extra files into `dir`; returns the paths.
pub fn write_outcome(dir: &Path, command: Command, outcome: &Outcome) -> Result<Vec<PathBuf>, CliError> {
    let io = |path: &Path, e: std::io::Error| CliError::Io {
        path: path.display().to_string(),
        message: e.to_string(),
    };
    std::fs::create_dir_all(dir).map_err(|e| io(dir, e))?;
    let mut files = vec![(
        format!("{}.json", command.file_stem()),
        report::render_json(&outcome.report),
    )];
    if let Some(csv) = &outcome.csv {
        files.push((format!("{}.csv", command.file_stem()), csv.clone()));
    }
    files.extend(outcome.extra_files.iter().cloned());
    files
        .into_iter()
        .map(|(name, contents)| {
            let path = dir.join(name);
            std::fs::write(&path, contents).map_err(|e| io(&path, e))?;
            Ok(path)
        })
        .collect()
}
