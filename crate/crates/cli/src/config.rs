//! `--config <json>`: default flag values, overridden by the command line.
//!
//! Top-level keys are global flags (`seed`, `verbose`) or subcommand names
//! holding that subcommand's flags, e.g.
//! `{"seed": 7, "train": {"arch": "rnn", "epochs": 50}}`. Keys use the flag
//! names with `-` or `_`.

use clap::error::ErrorKind;
use clap::parser::ValueSource;
use clap::{ArgMatches, Command};
use serde_json::Value;

fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

fn usage(cmd: &mut Command, msg: String) -> clap::Error {
    cmd.error(ErrorKind::InvalidValue, msg)
}

fn scalar(v: &Value) -> Option<String> {
    match v {
        Value::String(s) => Some(s.clone()),
        Value::Number(n) => Some(n.to_string()),
        _ => None,
    }
}

/// Appends flags for `entries` that the command line did not set.
fn inject(
    cmd: &mut Command,
    target: &Command,
    matches: &ArgMatches,
    entries: &serde_json::Map<String, Value>,
    out: &mut Vec<String>,
) -> Result<(), clap::Error> {
    for (key, value) in entries {
        let id = key.replace('-', "_");
        let Some(arg) = target.get_arguments().find(|a| a.get_id().as_str() == id) else {
            return Err(usage(cmd, format!("unknown config key `{key}` for `{}`", target.get_name())));
        };
        if matches.value_source(&id) == Some(ValueSource::CommandLine) {
            continue;
        }
        let long = format!("--{}", arg.get_long().unwrap_or(&id));
        match value {
            Value::Bool(true) => out.push(long),
            Value::Bool(false) | Value::Null => {}
            Value::Array(items) => {
                for item in items {
                    let s = scalar(item).ok_or_else(|| usage(cmd, format!("config key `{key}` has a non-scalar item")))?;
                    out.push(format!("{long}={s}"));
                }
            }
            Value::Number(n) if matches!(arg.get_action(), clap::ArgAction::Count) => {
                let times = n.as_u64().ok_or_else(|| usage(cmd, format!("config key `{key}` must be a count")))?;
                out.extend(std::iter::repeat_n(long.clone(), times as usize));
            }
            v => {
                let s = scalar(v).ok_or_else(|| usage(cmd, format!("config key `{key}` must be a scalar")))?;
                out.push(format!("{long}={s}"));
            }
        }
    }
    Ok(())
}

/// Returns `argv` extended with the config file's values, if one is given.
pub fn merge(mut cmd: Command, mut argv: Vec<String>) -> Result<Vec<String>, clap::Error> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| usage(&mut cmd, format!("cannot read config {path}: {e}")))?;
    let json: Value = serde_json::from_str(&text).map_err(|e| usage(&mut cmd, format!("invalid config {path}: {e}")))?;
    let Value::Object(root) = json else {
        return Err(usage(&mut cmd, format!("config {path} must be a JSON object")));
    };

    // Best-effort parse to learn the subcommand and what the user set.
    let matches = cmd.clone().ignore_errors(true).try_get_matches_from(&argv)?;
    let sub = matches.subcommand();
    let mut extra = Vec::new();
    let mut globals = serde_json::Map::new();
    for (key, value) in &root {
        match (value, cmd.find_subcommand(key)) {
            (Value::Object(section), Some(sc)) => {
                if let Some((name, sub_matches)) = sub {
                    if name == key {
                        let sc = sc.clone();
                        inject(&mut cmd, &sc, sub_matches, section, &mut extra)?;
                    }
                }
            }
            _ => {
                globals.insert(key.clone(), value.clone());
            }
        }
    }
    let root_cmd = cmd.clone();
    let global_matches = sub.map_or(&matches, |(_, m)| m);
    inject(&mut cmd, &root_cmd, global_matches, &globals, &mut extra)?;
    argv.extend(extra);
    Ok(argv)
}
