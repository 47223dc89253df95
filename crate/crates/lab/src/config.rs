//! Config files and `--set key=value` overrides.

use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;
use toml::{Table, Value};

use crate::error::LabError;

/// Reads a TOML config, or the `config` echo of a JSON results document.
pub fn load_table(path: &Path) -> Result<Table, LabError> {
    let text = std::fs::read_to_string(path).map_err(|source| LabError::Io {
        path: path.display().to_string(),
        source,
    })?;
    let is_json = path.extension().is_some_and(|e| e.eq_ignore_ascii_case("json"));
    if is_json {
        let doc: serde_json::Value = serde_json::from_str(&text).map_err(|e| LabError::Validation(e.to_string()))?;
        let cfg = doc.get("config").cloned().unwrap_or(doc);
        return to_table(&cfg);
    }
    text.parse::<Table>().map_err(|e| LabError::Validation(format!("{}: {e}", path.display())))
}

/// Serializes any config value into a TOML table.
pub fn to_table<T: Serialize>(value: &T) -> Result<Table, LabError> {
    match Value::try_from(value) {
        Ok(Value::Table(t)) => Ok(t),
        Ok(_) => Err(LabError::Validation("config must be a table".into())),
        Err(e) => Err(LabError::Validation(e.to_string())),
    }
}

/// Parses the right-hand side of an override as a TOML value, falling back
/// to a bare string.
fn parse_value(raw: &str) -> Value {
    format!("v = {raw}")
        .parse::<Table>()
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| Value::String(raw.to_string()))
}

/// Applies one `a.b.c=value` override, creating tables along the path.
pub fn apply_override(table: &mut Table, assignment: &str) -> Result<(), LabError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| LabError::Validation(format!("override `{assignment}` is not key=value")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(LabError::Validation(format!("bad override key `{key}`")));
    }
    let mut cur = table;
    for p in &parts[..parts.len() - 1] {
        let entry = cur.entry(p.to_string()).or_insert_with(|| Value::Table(Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| LabError::Validation(format!("override path `{key}` crosses a non-table")))?;
    }
    cur.insert(parts[parts.len() - 1].to_string(), parse_value(raw.trim()));
    Ok(())
}

/// Config file (optional) plus overrides, deserialized into `T`.
pub fn resolve<T: DeserializeOwned>(path: Option<&Path>, overrides: &[String]) -> Result<T, LabError> {
    let mut table = match path {
        Some(p) => load_table(p)?,
        None => Table::new(),
    };
    for o in overrides {
        apply_override(&mut table, o)?;
    }
    Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| LabError::Validation(e.to_string()))
}

/// TOML text of a resolved config, for the run echo.
pub fn echo<T: Serialize>(value: &T) -> Result<String, LabError> {
    toml::to_string(value).map_err(|e| LabError::Validation(e.to_string()))
}
