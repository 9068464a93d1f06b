//! Merging a flat `key = value` file under the command-line flags.

use std::ffi::OsString;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::Command;

use crate::output::DataError;

/// Parses `key = value` lines; `#` starts a comment. Keys are flag names,
/// with `-` and `_` interchangeable.
pub fn parse(text: &str) -> Result<Vec<(String, String)>, DataError> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| DataError(format!("config line {}: expected `key = value`", i + 1)))?;
        out.push((key.trim().to_owned(), value.trim().trim_matches('"').to_owned()));
    }
    Ok(out)
}

/// Value of `--config` and the subcommand name, scanned without a full parse
/// so that the file may supply required flags.
pub fn locate(argv: &[OsString]) -> (Option<PathBuf>, Option<String>) {
    let mut config = None;
    let mut sub = None;
    let mut args = argv.iter().skip(1).map(|a| a.to_string_lossy().into_owned());
    while let Some(a) = args.next() {
        if a == "--config" {
            config = args.next().map(PathBuf::from);
        } else if let Some(v) = a.strip_prefix("--config=") {
            config = Some(PathBuf::from(v));
        } else if sub.is_none() && !a.starts_with('-') {
            sub = Some(a);
        }
    }
    (config, sub)
}

fn given_on_command_line(argv: &[OsString], long: &str) -> bool {
    let flag = format!("--{long}");
    argv.iter().any(|a| {
        let a = a.to_string_lossy();
        a == flag.as_str() || a.starts_with(&format!("{flag}="))
    })
}

/// The argument list with config entries appended for every flag not given
/// on the command line, and the keys that matched no flag.
pub fn merge(cmd: &Command, argv: Vec<OsString>, sub: &str, path: &Path) -> anyhow::Result<(Vec<OsString>, Vec<String>)> {
    let text = fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
    let entries = parse(&text)?;
    let Some(sub) = cmd.find_subcommand(sub) else {
        return Ok((argv, Vec::new()));
    };
    let mut extra: Vec<OsString> = Vec::new();
    let mut unknown = Vec::new();
    for (key, value) in entries {
        let id = key.replace('-', "_");
        let long = key.replace('_', "-");
        let Some(arg) = sub.get_arguments().find(|a| a.get_long().is_some_and(|l| l == long) || a.get_id().as_str() == id) else {
            if id != "config" {
                unknown.push(key);
            }
            continue;
        };
        let Some(long) = arg.get_long() else { continue };
        if given_on_command_line(&argv, long) {
            continue;
        }
        let flag = format!("--{long}");
        if arg.get_action().takes_values() {
            extra.push(flag.into());
            if arg.get_num_args().is_some_and(|n| n.max_values() > 1) {
                extra.extend(value.split_whitespace().map(OsString::from));
            } else {
                extra.push(value.into());
            }
        } else {
            let on: bool = value.parse().map_err(|_| DataError(format!("config key `{key}` expects true or false")))?;
            if on {
                extra.push(flag.into());
            }
        }
    }
    let mut argv = argv;
    argv.extend(extra);
    Ok((argv, unknown))
}
