mod evaluate;
mod fuse;
mod gen_data;
mod predict;
mod report;
mod train;

use std::path::{Path, PathBuf};
use std::time::Instant;

use floeformer::synth::{Sensor, Split};

use crate::args::{Cli, Command, SensorSel, SplitSel};
use crate::error::{CliError, Result};
use crate::manifest;

pub const THREADS_ENV: &str = "FLOEFORMER_THREADS";

fn worker_count(cli: &Cli) -> Result<usize> {
    if let Some(n) = cli.threads {
        return if n == 0 { Err(CliError::Usage("--threads must be at least 1".into())) } else { Ok(n) };
    }
    if let Ok(v) = std::env::var(THREADS_ENV) {
        return v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| CliError::Usage(format!("{THREADS_ENV}={v} is not a positive integer")));
    }
    Ok(std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1))
}

pub fn dispatch(cli: &Cli, resolved: Vec<(String, String)>) -> Result<()> {
    let started = Instant::now();
    let threads = worker_count(cli)?;
    // a second call in the same process keeps the first pool
    let _ = rayon::ThreadPoolBuilder::new().num_threads(threads).build_global();
    let (name, out) = match &cli.command {
        Command::GenData(a) => ("gen-data", gen_data::run(a)?),
        Command::Train(a) => ("train", train::run(a, cli.precision)?),
        Command::Predict(a) => ("predict", predict::run(a, cli.precision)?),
        Command::Fuse(a) => ("fuse", fuse::run(a)?),
        Command::Evaluate(a) => ("evaluate", evaluate::run(a)?),
        Command::Report(a) => ("report", report::run(a)?),
    };
    manifest::write(&out, name, &resolved, threads, started)
}

pub(crate) fn ensure_dir(dir: &Path) -> Result<PathBuf> {
    std::fs::create_dir_all(dir).map_err(|e| floeformer::Error::Io { path: dir.to_path_buf(), source: e })?;
    Ok(dir.to_path_buf())
}

pub(crate) fn sensor_filter(s: SensorSel) -> Option<Sensor> {
    match s {
        SensorSel::All => None,
        SensorSel::Sentinel1 => Some(Sensor::Sentinel1),
        SensorSel::Rcm => Some(Sensor::Rcm),
        SensorSel::Amsr2 => Some(Sensor::Amsr2),
    }
}

pub(crate) fn split_filter(s: SplitSel) -> Option<Split> {
    match s {
        SplitSel::All => None,
        SplitSel::Train => Some(Split::Train),
        SplitSel::Val => Some(Split::Val),
        SplitSel::Test => Some(Split::Test),
    }
}

/// Files in `dir` with the given extension, sorted by name.
pub(crate) fn files_with_ext(dir: &Path, ext: &str) -> Result<Vec<PathBuf>> {
    let rd = std::fs::read_dir(dir).map_err(|e| floeformer::Error::Io { path: dir.to_path_buf(), source: e })?;
    let mut out: Vec<PathBuf> = rd
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_file() && p.extension().is_some_and(|x| x == ext))
        .collect();
    out.sort();
    Ok(out)
}
