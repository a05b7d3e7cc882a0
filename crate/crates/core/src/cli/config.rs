//! `key=value` configuration files.
//!
//! Each non-blank, non-`#` line `key = value` becomes `--key value` right
//! after the subcommand name, so flags typed on the command line (which come
//! later) override it. `key = true` becomes a bare `--key`; `key = false` is
//! dropped.

use std::ffi::OsString;
use std::path::Path;

use crate::error::{Error, Result};

pub const CONFIG_ENV: &str = "TDNODE_CONFIG";

pub fn parse_config(text: &str) -> Result<Vec<OsString>> {
    let mut out = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::Parse(format!("config line {}: expected key=value, got {line:?}", i + 1)))?;
        let key = k.trim().replace('_', "-");
        let val = v.trim();
        if key.is_empty() || key == "config" {
            return Err(Error::Parse(format!("config line {}: bad key {k:?}", i + 1)));
        }
        match val {
            "true" => out.push(format!("--{key}").into()),
            "false" => {}
            _ => {
                out.push(format!("--{key}").into());
                out.push(val.into());
            }
        }
    }
    Ok(out)
}

fn config_path(args: &[OsString]) -> Option<(usize, usize, OsString)> {
    for (i, a) in args.iter().enumerate() {
        let s = a.to_string_lossy();
        if s == "--" {
            break;
        }
        if s == "--config" {
            return args.get(i + 1).map(|p| (i, 2, p.clone()));
        }
        if let Some(p) = s.strip_prefix("--config=") {
            return Some((i, 1, p.into()));
        }
    }
    None
}

/// Splices the config file named by `--config` (or `env`) into `args`.
pub fn expand_config(mut args: Vec<OsString>, env: Option<OsString>) -> Result<Vec<OsString>> {
    let path = match config_path(&args) {
        Some((i, len, p)) => {
            args.drain(i..i + len);
            p
        }
        None => match env {
            Some(p) if !p.is_empty() => p,
            _ => return Ok(args),
        },
    };
    let text = std::fs::read_to_string(Path::new(&path))
        .map_err(|e| Error::Parse(format!("cannot read config {}: {e}", Path::new(&path).display())))?;
    let extra = parse_config(&text)?;
    // the first argument after the program name that is not a global flag
    let mut at = 1;
    while at < args.len() {
        let s = args[at].to_string_lossy();
        if s == "--threads" {
            at += 2;
        } else if s.starts_with("--threads=") {
            at += 1;
        } else {
            break;
        }
    }
    let insert = (at + 1).min(args.len());
    args.splice(insert..insert, extra);
    Ok(args)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn os(v: &[&str]) -> Vec<OsString> {
        v.iter().map(OsString::from).collect()
    }

    #[test]
    fn lines_become_flags() {
        let text = "# comment\nseed = 7\n\niterations=50\nlearn_first_delay = true\nground-truth = false\n";
        assert_eq!(
            parse_config(text).unwrap(),
            os(&["--seed", "7", "--iterations", "50", "--learn-first-delay"])
        );
        assert!(parse_config("no equals sign").is_err());
    }

    #[test]
    fn file_flags_precede_explicit_ones() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "seed=3\n").unwrap();
        let args = os(&["tdnode", "--threads", "1", "train", "--config", path.to_str().unwrap(), "--seed", "9"]);
        let out = expand_config(args, None).unwrap();
        assert_eq!(out, os(&["tdnode", "--threads", "1", "train", "--seed", "3", "--seed", "9"]));
    }

    #[test]
    fn env_path_is_used_without_flag() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "horizon=3\n").unwrap();
        let out = expand_config(os(&["tdnode", "train"]), Some(path.into_os_string())).unwrap();
        assert_eq!(out, os(&["tdnode", "train", "--horizon", "3"]));
        assert_eq!(expand_config(os(&["tdnode", "hopf"]), None).unwrap(), os(&["tdnode", "hopf"]));
    }
}
