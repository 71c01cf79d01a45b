//! `--config file.json` support: the file's keys become flags inserted right
//! after the subcommand, so anything given explicitly later on the command
//! line overrides them.

use std::ffi::OsString;
use std::fs;

use serde_json::Value;

const SUBCOMMANDS: [&str; 6] = ["sample-prior", "gen-data", "fit", "predict", "chi-sweep", "moments"];

fn config_path(args: &[OsString]) -> Option<OsString> {
    let mut it = args.iter();
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().cloned();
        }
        if let Some(rest) = s.strip_prefix("--config=") {
            return Some(rest.into());
        }
    }
    None
}

fn value_to_flags(key: &str, value: &Value, out: &mut Vec<OsString>) -> Result<(), String> {
    let flag = format!("--{}", key.replace('_', "-"));
    match value {
        Value::Null => {}
        Value::Bool(true) => out.push(flag.into()),
        Value::Bool(false) => {}
        Value::String(s) => {
            out.push(flag.into());
            out.push(s.into());
        }
        Value::Number(n) => {
            out.push(flag.into());
            out.push(n.to_string().into());
        }
        Value::Array(items) => {
            for item in items {
                value_to_flags(key, item, out)?;
            }
        }
        Value::Object(_) => {
            out.push(flag.into());
            out.push(value.to_string().into());
        }
    }
    Ok(())
}

/// Expand `--config` into explicit flags.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>, String> {
    let Some(path) = config_path(&args) else { return Ok(args) };
    let text = fs::read_to_string(&path).map_err(|e| format!("cannot read config {}: {e}", path.to_string_lossy()))?;
    let json: Value = serde_json::from_str(&text).map_err(|e| format!("config is not valid JSON: {e}"))?;
    let Value::Object(map) = json else { return Err("config must be a JSON object".into()) };
    let mut flags = Vec::new();
    for (k, v) in &map {
        if k == "config" {
            continue;
        }
        value_to_flags(k, v, &mut flags)?;
    }
    let Some(pos) = args.iter().position(|a| SUBCOMMANDS.contains(&a.to_string_lossy().as_ref())) else {
        return Ok(args);
    };
    let mut out = args[..=pos].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}
