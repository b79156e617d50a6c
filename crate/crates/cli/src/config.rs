//! `--config` files: `key=value` lines mirroring the long flags of a subcommand.
//!
//! ```text
//! # comment
//! epochs = 300
//! mode = full
//! ```
//!
//! Entries are spliced in front of the command-line flags; keys that also
//! appear on the command line are dropped, so an explicit flag always wins.

use std::ffi::OsString;
use std::fs;

use mdn_core::MdnError;

/// Removes `--config <path>` / `--config=<path>` from `args` and returns the path.
fn take_config_path(args: &mut Vec<OsString>) -> Result<Option<String>, MdnError> {
    let mut path = None;
    let mut i = 1;
    while i < args.len() {
        let arg = args[i].to_string_lossy().into_owned();
        if arg == "--" {
            break;
        }
        if arg == "--config" {
            if i + 1 >= args.len() {
                return Err(MdnError::InvalidInput("--config needs a file path".into()));
            }
            path = Some(args[i + 1].to_string_lossy().into_owned());
            args.drain(i..i + 2);
        } else if let Some(p) = arg.strip_prefix("--config=") {
            path = Some(p.to_string());
            args.remove(i);
        } else {
            i += 1;
        }
    }
    Ok(path)
}

fn flag_key(arg: &str) -> Option<String> {
    let body = arg.strip_prefix("--")?;
    Some(body.split_once('=').map_or(body, |(k, _)| k).to_string())
}

/// Parses config text into `--key=value` flags.
pub fn parse_config(text: &str) -> Result<Vec<OsString>, MdnError> {
    let mut flags = Vec::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| MdnError::Parse {
            line: n + 1,
            message: format!("expected `key=value`, found `{line}`"),
        })?;
        let key = key.trim().trim_start_matches("--").replace('_', "-");
        if key.is_empty() || key == "config" {
            return Err(MdnError::Parse {
                line: n + 1,
                message: format!("invalid key in `{line}`"),
            });
        }
        flags.push(OsString::from(format!("--{key}={}", value.trim())));
    }
    Ok(flags)
}

/// Expands `--config` into flags placed right after the subcommand name.
pub fn expand_args(mut args: Vec<OsString>) -> Result<Vec<OsString>, MdnError> {
    let Some(path) = take_config_path(&mut args)? else {
        return Ok(args);
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| MdnError::InvalidInput(format!("cannot read config file `{path}`: {e}")))?;
    let given: Vec<String> = args.iter().skip(1).filter_map(|a| flag_key(&a.to_string_lossy())).collect();
    let flags: Vec<OsString> = parse_config(&text)?
        .into_iter()
        .filter(|f| flag_key(&f.to_string_lossy()).is_none_or(|k| !given.contains(&k)))
        .collect();
    let sub = args
        .iter()
        .skip(1)
        .position(|a| !a.to_string_lossy().starts_with('-'))
        .map_or(args.len(), |p| p + 2);
    args.splice(sub.min(args.len())..sub.min(args.len()), flags);
    Ok(args)
}
