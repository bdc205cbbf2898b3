//! `--config file.json` support: the file's keys become flags inserted right
//! after the subcommand, so anything given on the command line overrides them.
//!
//! ```json
//! { "seed": 3, "train": { "epochs": 50, "variant": "fata" } }
//! ```
//!
//! Top-level scalar keys apply to every subcommand; an object keyed by a
//! subcommand name applies only to that subcommand. `true` emits a bare
//! switch, `false` and `null` emit nothing, and arrays emit the flag once
//! followed by every element.

use std::ffi::OsString;
use std::path::PathBuf;

use anyhow::{bail, Context, Result};
use serde_json::{Map, Value};

const SUBCOMMANDS: [&str; 7] = ["prepare", "train", "eval", "explain", "check-axioms", "cluster", "serve"];

/// Returns `args` with config-file flags spliced in.
pub fn expand(args: Vec<OsString>) -> Result<Vec<OsString>> {
    let mut config = None;
    let mut sub = None;
    let mut i = 1;
    while i < args.len() {
        let a = args[i].to_string_lossy();
        if a == "--config" {
            config = args.get(i + 1).map(PathBuf::from);
            i += 2;
            continue;
        }
        if let Some(p) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(p));
        } else if sub.is_none() && !a.starts_with('-') {
            sub = Some(i);
        }
        i += 1;
    }
    let (Some(path), Some(pos)) = (config, sub) else {
        return Ok(args);
    };
    let name = args[pos].to_string_lossy().into_owned();
    let text = std::fs::read_to_string(&path).with_context(|| format!("reading config {}", path.display()))?;
    let root: Value = serde_json::from_str(&text).with_context(|| format!("parsing config {}", path.display()))?;
    let Value::Object(root) = root else {
        bail!("config {} must hold a JSON object", path.display());
    };
    let mut flags = Vec::new();
    push_flags(&root, &mut flags, true)?;
    if let Some(section) = root.get(&name) {
        let Value::Object(section) = section else {
            bail!("config section `{name}` must be an object");
        };
        push_flags(section, &mut flags, false)?;
    }
    let mut out = args[..=pos].to_vec();
    out.extend(flags);
    out.extend_from_slice(&args[pos + 1..]);
    Ok(out)
}

fn push_flags(map: &Map<String, Value>, out: &mut Vec<OsString>, top: bool) -> Result<()> {
    for (key, value) in map {
        if top && SUBCOMMANDS.contains(&key.as_str()) {
            continue;
        }
        if key == "config" {
            bail!("config files cannot nest `config`");
        }
        let flag = OsString::from(format!("--{}", key.replace('_', "-")));
        match value {
            Value::Null | Value::Bool(false) => {}
            Value::Bool(true) => out.push(flag),
            Value::Array(items) => {
                out.push(flag);
                for v in items {
                    out.push(scalar(key, v)?);
                }
            }
            v => {
                out.push(flag);
                out.push(scalar(key, v)?);
            }
        }
    }
    Ok(())
}

fn scalar(key: &str, v: &Value) -> Result<OsString> {
    Ok(match v {
        Value::String(s) => s.into(),
        Value::Number(n) => n.to_string().into(),
        Value::Bool(b) => b.to_string().into(),
        _ => bail!("config key `{key}` must hold a scalar or an array of scalars"),
    })
}
