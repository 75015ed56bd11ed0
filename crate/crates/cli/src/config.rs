//! Parameter files: `key = value` lines or JSON.

use std::fs;
use std::path::Path;

use regime_stop::model::RawParams;
use serde_json::Value;

use crate::error::CliError;

/// Applies one config file on top of `params`.
pub fn apply_file(params: &mut RawParams, path: &Path) -> Result<(), CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::io(path, e))?;
    let origin = path.display().to_string();
    if text.trim_start().starts_with('{') {
        apply_json(params, &text, &origin)
    } else {
        apply_key_values(params, &text, &origin)
    }
}

pub fn apply_key_values(params: &mut RawParams, text: &str, origin: &str) -> Result<(), CliError> {
    for (n, line) in text.lines().enumerate() {
        let line = line.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let bad = |msg: String| CliError::Config {
            origin: format!("{origin}:{}", n + 1),
            message: msg,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| bad(format!("expected `key = value`, got `{line}`")))?;
        let (key, value) = (key.trim(), value.trim());
        let v: f64 = value
            .parse()
            .map_err(|_| bad(format!("`{value}` is not a number")))?;
        if !params.set(key, v) {
            return Err(bad(format!("unknown key `{key}`")));
        }
    }
    Ok(())
}

/// Accepts a flat object of parameter keys, or any object carrying a
/// `params` object (the output of `solve` and `calibrate`).
pub fn apply_json(params: &mut RawParams, text: &str, origin: &str) -> Result<(), CliError> {
    let bad = |msg: String| CliError::Config {
        origin: origin.to_string(),
        message: msg,
    };
    let root: Value = serde_json::from_str(text).map_err(|e| bad(e.to_string()))?;
    let (object, nested) = match root.get("params") {
        Some(Value::Object(m)) => (m, true),
        Some(_) => return Err(bad("`params` must be an object".into())),
        None => match &root {
            Value::Object(m) => (m, false),
            _ => return Err(bad("expected a JSON object".into())),
        },
    };
    for (key, value) in object {
        if !nested && key == "schema" {
            continue;
        }
        let v = value
            .as_f64()
            .ok_or_else(|| bad(format!("`{key}` must be a number")))?;
        if !params.set(key, v) {
            return Err(bad(format!("unknown key `{key}`")));
        }
    }
    Ok(())
}
