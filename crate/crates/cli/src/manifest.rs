//! `run_manifest.txt`: the resolved flags of a run plus version and timing.
//! The file is valid `--config` input, so a run can be repeated from it.

use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;

use clap::ArgMatches;
use floeformer::container::write_atomic;

use crate::error::Result;

pub const MANIFEST_NAME: &str = "run_manifest.txt";

/// `(flag, value)` for every argument of the chosen subcommand, defaults included.
pub fn resolved_args(m: &ArgMatches) -> Vec<(String, String)> {
    let Some((name, sub)) = m.subcommand() else {
        return Vec::new();
    };
    // `ids()` also lists the derive's argument-group id; keep real arguments only
    let root = crate::command();
    let known: Vec<&str> = root
        .get_arguments()
        .chain(root.find_subcommand(name).into_iter().flat_map(|c| c.get_arguments()))
        .map(|a| a.get_id().as_str())
        .collect();
    let mut out: Vec<(String, String)> = sub
        .ids()
        .filter(|id| id.as_str() != "config" && known.contains(&id.as_str()))
        .filter_map(|id| {
            let raw = sub.get_raw(id.as_str())?;
            let v: Vec<String> = raw.map(|s| s.to_string_lossy().into_owned()).collect();
            Some((id.as_str().replace('_', "-"), v.join(",")))
        })
        .collect();
    out.sort();
    out
}

pub fn get<'a>(args: &'a [(String, String)], key: &str) -> Option<&'a str> {
    args.iter().find(|(k, _)| k == key).map(|(_, v)| v.as_str())
}

pub fn write(dir: &Path, command: &str, args: &[(String, String)], threads: usize, started: Instant) -> Result<()> {
    let mut s = String::new();
    let _ = writeln!(s, "command={command}");
    let _ = writeln!(s, "version={}", env!("CARGO_PKG_VERSION"));
    for (k, v) in args {
        if k != "threads" {
            let _ = writeln!(s, "{k}={v}");
        }
    }
    let _ = writeln!(s, "threads={threads}");
    let _ = writeln!(s, "wall-clock-s={:.3}", started.elapsed().as_secs_f64());
    write_atomic(&dir.join(MANIFEST_NAME), s.as_bytes())?;
    Ok(())
}

/// Reads a manifest back as key/value pairs.
pub fn read(dir: &Path) -> Result<Vec<(String, String)>> {
    let path = dir.join(MANIFEST_NAME);
    let text = std::fs::read_to_string(&path).map_err(|e| floeformer::Error::Io { path: path.clone(), source: e })?;
    crate::config::parse_pairs(&text).map_err(|e| crate::error::CliError::data(&path, e))
}
