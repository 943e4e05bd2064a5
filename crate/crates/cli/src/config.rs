//! `--config FILE` support: a TOML table whose keys are long flag names.
//!
//! The file is expanded into ordinary arguments placed right after the
//! subcommand, so flags given on the command line still win and unknown keys
//! fail like unknown flags.

use std::ffi::OsString;
use std::fs;

use anyhow::{bail, Context, Result};
use toml::Value;

/// Splits `--config PATH` / `--config=PATH` out of `args`.
fn take_config(args: &mut Vec<OsString>) -> Result<Option<OsString>> {
    let mut found = None;
    let mut i = 1;
    while i < args.len() {
        let arg = args[i].to_string_lossy().into_owned();
        if arg == "--" {
            break;
        }
        if arg == "--config" {
            if i + 1 >= args.len() {
                bail!("--config needs a file argument");
            }
            found = Some(args.remove(i + 1));
            args.remove(i);
            continue;
        }
        if let Some(path) = arg.strip_prefix("--config=") {
            found = Some(OsString::from(path));
            args.remove(i);
            continue;
        }
        i += 1;
    }
    Ok(found)
}

fn scalar(key: &str, v: &Value) -> Result<String> {
    Ok(match v {
        Value::String(s) => s.clone(),
        Value::Integer(n) => n.to_string(),
        Value::Float(x) => x.to_string(),
        other => bail!("config key `{key}`: unsupported value {other}"),
    })
}

/// Turns a parsed config table into flag arguments.
pub fn to_args(table: &toml::Table) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (key, value) in table {
        if key == "config" {
            bail!("config files cannot include other config files");
        }
        let flag = format!("--{key}");
        match value {
            Value::Boolean(true) => out.push(flag.into()),
            Value::Boolean(false) => {}
            Value::Array(items) => {
                for item in items {
                    out.push(flag.clone().into());
                    out.push(scalar(key, item)?.into());
                }
            }
            v => {
                out.push(flag.into());
                out.push(scalar(key, v)?.into());
            }
        }
    }
    Ok(out)
}

/// Returns `args` with any config file expanded in place after the subcommand.
pub fn expand(mut args: Vec<OsString>, subcommands: &[&str]) -> Result<Vec<OsString>> {
    let Some(path) = take_config(&mut args)? else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path).with_context(|| format!("reading config {}", path.to_string_lossy()))?;
    let table: toml::Table = text
        .parse()
        .with_context(|| format!("parsing config {}", path.to_string_lossy()))?;
    let extra = to_args(&table)?;
    let at = args
        .iter()
        .position(|a| subcommands.contains(&a.to_string_lossy().as_ref()))
        .map(|i| i + 1)
        .unwrap_or(args.len());
    args.splice(at..at, extra);
    Ok(args)
}
