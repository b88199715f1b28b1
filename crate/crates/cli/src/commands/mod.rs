use std::path::{Path, PathBuf};

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::config::{resolve, ConfigFile};
use crate::output::{write_text, Report};
use crate::CliError;

pub mod bandwidth;
pub mod diagnose;
pub mod grid;
pub mod inject;
pub mod spn;

pub struct Ctx {
    pub out_dir: PathBuf,
    pub json: bool,
    pub file: Option<ConfigFile>,
    /// Common flags such as `--seed`.
    pub overrides: Vec<(String, String)>,
    /// `--set` pairs; applied after command flags.
    pub set: Vec<(String, String)>,
}

impl Ctx {
    /// Resolves `P` from defaults, config file, `--seed`, command flags and `--set`.
    pub fn params<P: Serialize + DeserializeOwned + Default>(
        &self,
        command: &str,
        flags: Vec<(String, String)>,
    ) -> Result<(P, Value), CliError> {
        let mut all = self.overrides.clone();
        all.extend(flags);
        all.extend(self.set.iter().cloned());
        resolve(command, self.file.as_ref(), &all)
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.out_dir.join(name)
    }

    /// Writes `<command>.json` and prints either it or `summary`.
    pub fn finish<T: Serialize>(&self, report: &Report<T>, summary: &str) -> Result<(), CliError> {
        let json = report.to_json();
        write_text(&self.path(&format!("{}.json", report.command)), &json)?;
        for w in &report.warnings {
            log::warn!("{w}");
        }
        if self.json {
            print!("{json}");
        } else {
            print!("{summary}");
        }
        Ok(())
    }
}

/// Collects `Some` flag values as `(key, text)` overrides.
#[macro_export]
macro_rules! flag_overrides {
    ($($key:literal => $val:expr),* $(,)?) => {{
        let mut v: Vec<(String, String)> = Vec::new();
        $(if let Some(x) = &$val { v.push(($key.to_string(), x.to_string())); })*
        v
    }};
}

pub fn require_input(input: &str, command: &str) -> Result<PathBuf, CliError> {
    if input.is_empty() {
        return Err(CliError::Usage(format!("{command} needs --input (or input = ... in the config)")));
    }
    Ok(PathBuf::from(input))
}

pub fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>, CliError> {
    std::fs::File::open(path)
        .map(std::io::BufReader::new)
        .map_err(|e| CliError::Usage(format!("cannot open {}: {e}", path.display())))
}
