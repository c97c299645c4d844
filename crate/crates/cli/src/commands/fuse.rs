use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use floeformer::fusion::{mosaic_with, FusionMode, SensorLayer};
use floeformer::synth::Sensor;
use floeformer::uq::UncertaintyField;

use super::{ensure_dir, files_with_ext};
use crate::args::{FuseArgs, FuseMode};
use crate::error::{CliError, Result};

/// Fields of one sensor in `dir`, keyed by scene.
fn sensor_fields(dir: &Path, sensor: Sensor) -> Result<BTreeMap<usize, UncertaintyField>> {
    let mut out = BTreeMap::new();
    for path in files_with_ext(dir, "field")? {
        let f = UncertaintyField::load(&path)?;
        if f.sensor != Some(sensor) {
            continue;
        }
        let scene = f.scene.ok_or_else(|| CliError::data(&path, "field has no scene tag"))?;
        if out.insert(scene, f).is_some() {
            return Err(CliError::data(dir, format!("several {sensor} fields for scene {scene}; keep one method per directory")));
        }
    }
    Ok(out)
}

pub fn run(a: &FuseArgs) -> Result<PathBuf> {
    let dirs = [(Sensor::Sentinel1, &a.s1), (Sensor::Rcm, &a.rcm), (Sensor::Amsr2, &a.amsr2)];
    if dirs.iter().all(|(_, d)| d.is_none()) {
        return Err(CliError::Usage("give at least one of --s1, --rcm, --amsr2".into()));
    }
    let mut per_sensor = Vec::new();
    for (sensor, dir) in dirs {
        if let Some(d) = dir {
            per_sensor.push(sensor_fields(d, sensor)?);
        }
    }
    let scenes: BTreeSet<usize> = per_sensor.iter().flat_map(|m| m.keys().copied()).collect();
    if scenes.is_empty() {
        return Err(CliError::data(a.s1.as_ref().or(a.rcm.as_ref()).or(a.amsr2.as_ref()).expect("one dir"), "no fields found"));
    }
    let mode = match a.mode {
        FuseMode::Priority => FusionMode::Priority,
        FuseMode::LowestUncertainty => FusionMode::LowestUncertainty,
    };
    let out = ensure_dir(&a.out)?;
    for &scene in &scenes {
        let fields: Vec<&UncertaintyField> = per_sensor.iter().filter_map(|m| m.get(&scene)).collect();
        let layers = fields.iter().map(|f| SensorLayer::from_field(f)).collect::<floeformer::Result<Vec<_>>>()?;
        let mut m = mosaic_with(&layers, mode)?;
        m.scene = Some(scene);
        let method = fields[0].method;
        m.method = fields.iter().all(|f| f.method == method).then_some(method);
        m.save(&out.join(m.file_name()))?;
    }
    eprintln!("wrote {} mosaics to {}", scenes.len(), out.display());
    Ok(out)
}
