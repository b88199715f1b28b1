use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::Value;

use crate::CliError;

/// Top-level JSON document written by every command.
#[derive(Debug, Serialize)]
pub struct Report<T: Serialize> {
    pub command: &'static str,
    pub version: &'static str,
    pub resolved_config: Value,
    pub warnings: Vec<String>,
    pub result: T,
}

impl<T: Serialize> Report<T> {
    pub fn new(command: &'static str, resolved_config: Value, warnings: Vec<String>, result: T) -> Self {
        Self {
            command,
            version: env!("CARGO_PKG_VERSION"),
            resolved_config,
            warnings,
            result,
        }
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serialises");
        s.push('\n');
        s
    }
}

pub fn partial_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().expect("file path").to_os_string();
    name.push(".partial");
    path.with_file_name(name)
}

/// Writes `<path>.partial` and renames it over `path` once complete.
pub fn write_atomic(path: &Path, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<(), CliError> {
    let tmp = write_partial(path, write)?;
    fs::rename(&tmp, path)?;
    Ok(())
}

/// Leaves the output at `<path>.partial`; used when a gate rejects the run.
pub fn write_partial(path: &Path, write: impl FnOnce(&mut dyn Write) -> std::io::Result<()>) -> Result<PathBuf, CliError> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let tmp = partial_path(path);
    let mut f = std::io::BufWriter::new(fs::File::create(&tmp)?);
    write(&mut f)?;
    f.flush()?;
    Ok(tmp)
}

pub fn write_text(path: &Path, text: &str) -> Result<(), CliError> {
    write_atomic(path, |w| w.write_all(text.as_bytes()))
}
