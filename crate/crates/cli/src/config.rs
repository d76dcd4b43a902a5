//! Flat `key = value` run configuration.

use std::fs;
use std::path::Path;

use dseq::TrainConfig;
use serde_json::{Map, Value};

/// Reads a config file and applies its entries on top of the defaults.
pub fn load_config(path: &Path) -> Result<TrainConfig, String> {
    let text = fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut entries = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| format!("{}:{}: expected key = value", path.display(), n + 1))?;
        entries.push((key.trim().to_string(), value.trim().to_string()));
    }
    apply_overrides(&TrainConfig::default(), &entries).map_err(|e| format!("{}: {e}", path.display()))
}

/// Sets each `key` to `value`, parsed according to the type of the existing
/// field. Later entries win.
pub fn apply_overrides(base: &TrainConfig, entries: &[(String, String)]) -> Result<TrainConfig, String> {
    let Value::Object(mut map) = serde_json::to_value(base).expect("config serializes") else {
        unreachable!("config serializes to an object")
    };
    for (key, value) in entries {
        set_field(&mut map, key, value)?;
    }
    let config: TrainConfig = serde_json::from_value(Value::Object(map)).map_err(|e| e.to_string())?;
    config.validate().map_err(|e| e.to_string())?;
    Ok(config)
}

fn set_field(map: &mut Map<String, Value>, key: &str, value: &str) -> Result<(), String> {
    let slot = map.get_mut(key).ok_or_else(|| format!("unknown config key `{key}`"))?;
    let bad = || format!("invalid value `{value}` for `{key}`");
    *slot = match slot {
        Value::Bool(_) => Value::Bool(match value {
            "true" | "1" | "yes" => true,
            "false" | "0" | "no" => false,
            _ => return Err(bad()),
        }),
        Value::Number(n) if n.is_u64() => Value::from(value.parse::<u64>().map_err(|_| bad())?),
        Value::Number(_) => {
            let x: f64 = value.parse().map_err(|_| bad())?;
            if !x.is_finite() {
                return Err(bad());
            }
            Value::from(x)
        }
        Value::Array(_) => Value::Array(
            value
                .split(',')
                .map(|s| s.trim().parse::<u64>().map(Value::from).map_err(|_| bad()))
                .collect::<Result<_, _>>()?,
        ),
        _ => return Err(bad()),
    };
    Ok(())
}

/// Renders a config back to the file format, one key per line.
pub fn render_config(config: &TrainConfig) -> String {
    let Value::Object(map) = serde_json::to_value(config).expect("config serializes") else {
        unreachable!("config serializes to an object")
    };
    let mut out = String::new();
    for (key, value) in map {
        let v = match value {
            Value::Array(items) => items.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(","),
            other => other.to_string(),
        };
        out.push_str(&format!("{key} = {v}\n"));
    }
    out
}
