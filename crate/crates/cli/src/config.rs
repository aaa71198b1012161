//! Config files: TOML whose top-level keys apply to every subcommand that
//! accepts them and whose `[subcommand]` tables apply to one subcommand.
//! Values become ordinary flags inserted before the user's own, so flags
//! given on the command line win.

use std::path::Path;

use clap::Command;
use toml::{Table, Value};

use crate::error::{CliError, Result};

/// Value of `--config` in `argv`, if present.
pub fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter();
    while let Some(arg) = it.next() {
        if arg == "--config" {
            return it.next().cloned();
        }
        if let Some(v) = arg.strip_prefix("--config=") {
            return Some(v.to_string());
        }
    }
    None
}

fn render(key: &str, value: &Value) -> Result<Vec<String>> {
    let flag = format!("--{}", key.replace('_', "-"));
    let scalar = |v: &Value| match v {
        Value::String(s) => Ok(s.clone()),
        Value::Integer(i) => Ok(i.to_string()),
        Value::Float(f) => Ok(f.to_string()),
        other => Err(CliError::Config(format!("unsupported value for `{key}`: {other}"))),
    };
    Ok(match value {
        Value::Boolean(true) => vec![flag],
        Value::Boolean(false) => Vec::new(),
        Value::Array(items) => {
            let parts = items.iter().map(scalar).collect::<Result<Vec<_>>>()?;
            vec![flag, parts.join(",")]
        }
        v => vec![flag, scalar(v)?],
    })
}

/// Rewrites `argv` by inserting the flags from `text` right after the
/// subcommand name.
pub fn expand_with(argv: &[String], text: &str, command: &Command) -> Result<Vec<String>> {
    let table: Table = text.parse().map_err(|e: toml::de::Error| CliError::Config(e.to_string()))?;
    let Some((pos, sub)) = argv
        .iter()
        .enumerate()
        .skip(1)
        .find_map(|(i, a)| command.find_subcommand(a).map(|s| (i, s)))
    else {
        return Ok(argv.to_vec());
    };
    let accepts = |key: &str| {
        let long = key.replace('_', "-");
        sub.get_arguments().any(|a| a.get_long() == Some(long.as_str()))
            || command.get_arguments().any(|a| a.is_global_set() && a.get_long() == Some(long.as_str()))
    };
    let mut inserted = Vec::new();
    for (key, value) in &table {
        match value {
            Value::Table(section) if key == sub.get_name() => {
                for (k, v) in section {
                    if !accepts(k) {
                        return Err(CliError::Config(format!("`{}` does not take `{k}`", sub.get_name())));
                    }
                    inserted.extend(render(k, v)?);
                }
            }
            Value::Table(_) => {}
            v if key != "config" && accepts(key) => {
                // section keys come later and override top-level ones
                inserted.splice(0..0, render(key, v)?);
            }
            _ => {}
        }
    }
    let mut out = argv[..=pos].to_vec();
    out.extend(inserted);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

/// Expands `argv` with the config file named by `--config`, if any.
pub fn expand(argv: Vec<String>, command: &Command) -> Result<Vec<String>> {
    match config_path(&argv) {
        Some(path) => {
            let text = std::fs::read_to_string(Path::new(&path)).map_err(|e| CliError::io(&path, e))?;
            expand_with(&argv, &text, command)
        }
        None => Ok(argv),
    }
}
