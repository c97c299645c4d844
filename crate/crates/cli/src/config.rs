//! `--config FILE` support: `key=value` lines become flags inserted before the
//! user's own flags, so the command line wins on conflict.

use std::ffi::OsString;
use std::path::PathBuf;

use clap::ArgAction;

use crate::error::{CliError, Result};

/// Manifest keys that describe a run rather than configure it.
const IGNORED: [&str; 4] = ["command", "version", "wall-clock-s", "config"];

fn config_path(argv: &[OsString]) -> Option<PathBuf> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        let s = a.to_string_lossy();
        if s == "--config" {
            return it.next().map(PathBuf::from);
        }
        if let Some(v) = s.strip_prefix("--config=") {
            return Some(PathBuf::from(v));
        }
    }
    None
}

/// Parses `key=value` lines; blank lines and `#` comments are skipped.
pub fn parse_pairs(text: &str) -> std::result::Result<Vec<(String, String)>, String> {
    let mut out = Vec::new();
    for (n, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| format!("line {}: expected key=value", n + 1))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}

pub fn merge_config(argv: Vec<OsString>) -> Result<Vec<OsString>> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", path.display())))?;
    let pairs = parse_pairs(&text).map_err(|e| CliError::Usage(format!("config {}: {e}", path.display())))?;

    let root = crate::command();
    let Some((pos, sub)) = argv
        .iter()
        .enumerate()
        .skip(1)
        .find_map(|(i, a)| root.find_subcommand(a.to_string_lossy().as_ref()).map(|s| (i, s.clone())))
    else {
        return Ok(argv);
    };
    let mut injected = Vec::new();
    for (key, value) in pairs {
        let key = key.replace('_', "-");
        if IGNORED.contains(&key.as_str()) {
            continue;
        }
        let arg = sub
            .get_arguments()
            .chain(root.get_arguments())
            .find(|a| a.get_long() == Some(key.as_str()))
            .ok_or_else(|| CliError::Usage(format!("config {}: unknown key `{key}` for `{}`", path.display(), sub.get_name())))?;
        if matches!(arg.get_action(), ArgAction::SetTrue) {
            match value.as_str() {
                "true" => injected.push(OsString::from(format!("--{key}"))),
                "false" => {}
                other => return Err(CliError::Usage(format!("config {}: `{key}` must be true or false, got `{other}`", path.display()))),
            }
        } else {
            injected.push(OsString::from(format!("--{key}={value}")));
        }
    }
    let mut out = argv[..=pos].to_vec();
    out.extend(injected);
    out.extend_from_slice(&argv[pos + 1..]);
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pairs_skip_comments() {
        let p = parse_pairs("# c\nepochs = 5\n\nseed=3\n").unwrap();
        assert_eq!(p, vec![("epochs".into(), "5".into()), ("seed".into(), "3".into())]);
        assert!(parse_pairs("nonsense").is_err());
    }

    #[test]
    fn flags_after_config_values() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = dir.path().join("run.cfg");
        std::fs::write(&cfg, "command=train\nepochs=9\nno_norm=true\nno_residual=false\n").unwrap();
        let argv: Vec<OsString> =
            ["floeformer", "train", "--config", cfg.to_str().unwrap(), "--epochs", "2"].iter().map(OsString::from).collect();
        let merged: Vec<String> = merge_config(argv).unwrap().iter().map(|a| a.to_string_lossy().into_owned()).collect();
        assert_eq!(merged[..4], ["floeformer", "train", "--epochs=9", "--no-norm"]);
        assert_eq!(merged.last().unwrap(), "2");
    }
}
