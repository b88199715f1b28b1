//! Flat `key = value` config files with `[section]` headers.
//!
//! Keys before the first header apply to every command that knows them;
//! keys under `[name]` apply to that command only and must be known to it.

use std::collections::BTreeMap;
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::Value;

use crate::CliError;

#[derive(Debug, Default, Clone)]
pub struct ConfigFile {
    pub global: BTreeMap<String, String>,
    pub sections: BTreeMap<String, BTreeMap<String, String>>,
}

impl ConfigFile {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        let mut cfg = ConfigFile::default();
        let mut section: Option<String> = None;
        for (i, raw) in text.lines().enumerate() {
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            if let Some(name) = line.strip_prefix('[') {
                let name = name
                    .strip_suffix(']')
                    .ok_or_else(|| CliError::config(i + 1, "unterminated section header"))?;
                section = Some(name.trim().to_string());
                cfg.sections.entry(name.trim().to_string()).or_default();
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| CliError::config(i + 1, format!("expected key = value, found {line:?}")))?;
            let (k, v) = (k.trim().replace('-', "_"), v.trim().trim_matches('"').to_string());
            if k.is_empty() {
                return Err(CliError::config(i + 1, "empty key"));
            }
            match &section {
                Some(s) => cfg.sections.get_mut(s).expect("inserted").insert(k, v),
                None => cfg.global.insert(k, v),
            };
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
        Self::parse(&text)
    }
}

fn parse_scalar(template: &Value, raw: &str, key: &str) -> Result<Value, CliError> {
    let bad = || CliError::Usage(format!("{key}: cannot read {raw:?} as {}", kind(template)));
    Ok(match template {
        Value::Bool(_) => Value::Bool(match raw.to_ascii_lowercase().as_str() {
            "true" | "yes" | "1" | "on" => true,
            "false" | "no" | "0" | "off" => false,
            _ => return Err(bad()),
        }),
        Value::Number(n) if n.is_u64() => Value::from(raw.parse::<u64>().map_err(|_| bad())?),
        Value::Number(n) if n.is_i64() => Value::from(raw.parse::<i64>().map_err(|_| bad())?),
        Value::Number(_) => {
            let v: f64 = raw.parse().map_err(|_| bad())?;
            serde_json::Number::from_f64(v).map(Value::Number).ok_or_else(bad)?
        }
        Value::Array(items) => {
            let elem = items.first().cloned().unwrap_or(Value::String(String::new()));
            Value::Array(
                raw.split(',')
                    .map(str::trim)
                    .filter(|s| !s.is_empty())
                    .map(|s| parse_scalar(&elem, s, key))
                    .collect::<Result<_, _>>()?,
            )
        }
        _ => Value::String(raw.to_string()),
    })
}

fn kind(v: &Value) -> &'static str {
    match v {
        Value::Bool(_) => "a boolean",
        Value::Number(n) if n.is_u64() => "a non-negative integer",
        Value::Number(n) if n.is_i64() => "an integer",
        Value::Number(_) => "a number",
        Value::Array(_) => "a comma-separated list",
        _ => "text",
    }
}

/// Defaults, then the file (global keys, then the command section), then
/// explicit overrides in order.
pub fn resolve<P: Serialize + DeserializeOwned + Default>(
    command: &str,
    file: Option<&ConfigFile>,
    overrides: &[(String, String)],
) -> Result<(P, Value), CliError> {
    let mut value = serde_json::to_value(P::default()).expect("params serialise");
    let obj = value.as_object_mut().expect("params are a struct");
    let mut apply = |k: &str, v: &str, strict: bool| -> Result<(), CliError> {
        let k = k.replace('-', "_");
        match obj.get(&k) {
            Some(t) => {
                let parsed = parse_scalar(t, v, &k)?;
                obj.insert(k, parsed);
                Ok(())
            }
            None if strict => Err(CliError::Usage(format!("unknown key {k:?} for {command}"))),
            None => Ok(()),
        }
    };
    if let Some(f) = file {
        for (k, v) in &f.global {
            apply(k, v, false)?;
        }
        if let Some(sec) = f.sections.get(command) {
            for (k, v) in sec {
                apply(k, v, true)?;
            }
        }
    }
    for (k, v) in overrides {
        apply(k, v, true)?;
    }
    let params = serde_json::from_value(value.clone())
        .map_err(|e| CliError::Usage(format!("invalid {command} configuration: {e}")))?;
    Ok((params, value))
}
