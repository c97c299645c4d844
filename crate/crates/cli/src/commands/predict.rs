use std::path::{Path, PathBuf};

use floeformer::net::Model;
use floeformer::synth::{load_records, ChipRecord};
use floeformer::uq::{bbb_predict, ensemble_predict, mc_dropout_predict, UncertaintyField};
use floeformer::{Real, Tensor};

use super::{ensure_dir, files_with_ext, sensor_filter, split_filter};
use crate::args::{Method, Precision, PredictArgs};
use crate::error::{CliError, Result};

pub fn run(a: &PredictArgs, precision: Precision) -> Result<PathBuf> {
    match precision {
        Precision::F32 => run_with::<f32>(a),
        Precision::F64 => run_with::<f64>(a),
    }
}

/// Snapshot checkpoints `snap_<epoch>.bin` of a training directory, in epoch order.
pub fn snapshot_paths(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut snaps: Vec<(usize, PathBuf)> = files_with_ext(dir, "bin")?
        .into_iter()
        .filter_map(|p| {
            let epoch = p.file_stem()?.to_str()?.strip_prefix("snap_")?.parse().ok()?;
            Some((epoch, p))
        })
        .collect();
    snaps.sort();
    Ok(snaps.into_iter().map(|(_, p)| p).collect())
}

enum Predictor<T> {
    Bbb(Model<T>),
    McDropout(Model<T>, f64),
    Ensemble(Vec<Model<T>>),
}

fn load_checkpoint<T: Real>(path: &Path) -> Result<Model<T>> {
    if path.is_dir() {
        return Err(CliError::data(path, "expected a checkpoint file such as best.bin, got a directory"));
    }
    Ok(Model::load(path)?)
}

fn predictor<T: Real>(a: &PredictArgs) -> Result<Predictor<T>> {
    Ok(match a.method {
        Method::Bbb => Predictor::Bbb(load_checkpoint(&a.model)?),
        Method::McDropout => {
            let m = load_checkpoint::<T>(&a.model)?;
            let p = a.dropout_p.unwrap_or(m.dropout_p);
            if p <= 0.0 {
                return Err(CliError::Usage(format!(
                    "{} was trained without dropout; pass --dropout-p to choose a rate",
                    a.model.display()
                )));
            }
            Predictor::McDropout(m, p)
        }
        Method::EpochEnsemble => {
            if !a.model.is_dir() {
                return Err(CliError::data(&a.model, "epoch-ensemble needs a training directory holding snap_<epoch>.bin files"));
            }
            let models = snapshot_paths(&a.model)?.iter().map(|p| Model::load(p)).collect::<floeformer::Result<Vec<_>>>()?;
            Predictor::Ensemble(models)
        }
    })
}

fn batch<T: Real>(records: &[&ChipRecord]) -> Result<Tensor<T>> {
    let r0 = records[0];
    let mut data = Vec::with_capacity(records.len() * r0.channels.len() * r0.side * r0.side);
    for r in records {
        if r.side != r0.side || r.channels.len() != r0.channels.len() {
            return Err(CliError::data(r.file_name(), "chips in one directory must share side and channel count"));
        }
        data.extend(r.chip_tensor::<T>()?.into_data());
    }
    Ok(Tensor::new(&[records.len(), r0.channels.len(), r0.side, r0.side], data)?)
}

fn run_with<T: Real>(a: &PredictArgs) -> Result<PathBuf> {
    let records = load_records(&a.chips, split_filter(a.split), sensor_filter(a.sensor))?;
    if records.is_empty() {
        return Err(CliError::data(&a.chips, "no chips match the selected split and sensor"));
    }
    if a.batch_size == 0 {
        return Err(CliError::Usage("--batch-size must be at least 1".into()));
    }
    let predictor = predictor::<T>(a)?;
    let out = ensure_dir(&a.out)?;
    let refs: Vec<&ChipRecord> = records.iter().collect();
    let mut written = 0;
    for group in refs.chunks(a.batch_size) {
        let chips = batch::<T>(group)?;
        let fields = match &predictor {
            Predictor::Bbb(m) => bbb_predict(m, &chips, a.samples, a.seed)?,
            Predictor::McDropout(m, p) => mc_dropout_predict(m, &chips, a.samples, *p, a.seed)?,
            Predictor::Ensemble(ms) => ensemble_predict(ms, &chips)?,
        };
        for (mut f, r) in fields.into_iter().zip(group) {
            tag(&mut f, r);
            f.save(&out.join(f.file_name()))?;
            written += 1;
        }
    }
    eprintln!("wrote {written} fields to {}", out.display());
    Ok(out)
}

fn tag(f: &mut UncertaintyField, r: &ChipRecord) {
    f.sensor = Some(r.sensor);
    f.scene = Some(r.scene_id);
    f.coverage = Some(r.coverage.clone());
}
