use std::collections::{BTreeMap, HashMap};
use std::path::PathBuf;

use floeformer::eval::{accuracy, table1_rows, write_table1, write_table2, BinStats, Table2Row};
use floeformer::fusion::Mosaic;
use floeformer::synth::{load_records, ChipRecord, Split};
use floeformer::uq::UncertaintyField;
use rayon::prelude::*;

use super::{ensure_dir, files_with_ext};
use crate::args::EvaluateArgs;
use crate::error::{CliError, Result};

pub const TABLE1_NAME: &str = "table1.csv";
pub const TABLE2_NAME: &str = "table2.csv";
pub const MOSAIC_SENSOR: &str = "mosaic";
pub const BASELINE_METHOD: &str = "global-mean";

/// One prediction grid reduced to what the tables need.
struct Scored {
    method: String,
    sensor: String,
    mean: Vec<f64>,
    uncertainty_pct: Vec<f64>,
    valid: Vec<bool>,
    truth: Vec<f64>,
}

#[derive(Default)]
struct Group {
    bins: BinStats,
    pred: Vec<f64>,
    baseline: Vec<f64>,
    truth: Vec<f64>,
    valid: Vec<bool>,
    chips: usize,
}

fn truth_of(r: &ChipRecord) -> Vec<f64> {
    r.truth.iter().map(|&v| v as f64).collect()
}

pub fn run(a: &EvaluateArgs) -> Result<PathBuf> {
    let records = load_records(&a.truth, None, None)?;
    let by_key: HashMap<(usize, String), &ChipRecord> = records.iter().map(|r| ((r.scene_id, r.sensor.to_string()), r)).collect();
    let by_scene: HashMap<usize, &ChipRecord> = records.iter().map(|r| (r.scene_id, r)).collect();

    // baseline: mean weak label over the training chips, per sensor and pooled
    let mut train_sums: HashMap<String, (f64, usize)> = HashMap::new();
    for r in records.iter().filter(|r| r.split == Split::Train) {
        let s: f64 = r.weak_label.iter().map(|&v| v as f64).sum();
        for key in [r.sensor.to_string(), MOSAIC_SENSOR.to_string()] {
            let e = train_sums.entry(key).or_default();
            e.0 += s;
            e.1 += r.weak_label.len();
        }
    }
    let train_mean = |sensor: &str| train_sums.get(sensor).filter(|e| e.1 > 0).map(|e| e.0 / e.1 as f64);

    let fields = files_with_ext(&a.pred, "field")?;
    let mosaics = files_with_ext(&a.pred, "mosaic")?;
    let score_field = |path: &PathBuf| -> Result<Scored> {
        let f = UncertaintyField::load(path)?;
        let (Some(scene), Some(sensor)) = (f.scene, f.sensor) else {
            return Err(CliError::data(path, "field lacks a scene or sensor tag"));
        };
        let r = by_key.get(&(scene, sensor.to_string())).ok_or_else(|| CliError::data(path, "no truth chip for this scene and sensor"))?;
        Ok(Scored {
            method: f.method.to_string(),
            sensor: sensor.to_string(),
            mean: f.mean.iter().map(|&v| v as f64).collect(),
            uncertainty_pct: f.uncertainty_pct(),
            valid: (0..f.mean.len()).map(|i| f.is_valid(i)).collect(),
            truth: truth_of(r),
        })
    };
    let score_mosaic = |path: &PathBuf| -> Result<Scored> {
        let m = Mosaic::load(path)?;
        let scene = m.scene.ok_or_else(|| CliError::data(path, "mosaic lacks a scene tag"))?;
        let r = by_scene.get(&scene).ok_or_else(|| CliError::data(path, "no truth chip for this scene"))?;
        Ok(Scored {
            method: m.method.map_or_else(|| "mixed".to_string(), |x| x.to_string()),
            sensor: MOSAIC_SENSOR.into(),
            mean: m.mean.iter().map(|&v| v as f64).collect(),
            uncertainty_pct: m.uncertainty.iter().map(|&v| v as f64).collect(),
            valid: (0..m.mean.len()).map(|i| m.is_valid(i)).collect(),
            truth: truth_of(r),
        })
    };
    // per-chip work in parallel; the reduction below runs in file order
    let mut scored: Vec<Scored> = fields.par_iter().map(score_field).collect::<Result<_>>()?;
    scored.extend(mosaics.par_iter().map(score_mosaic).collect::<Result<Vec<_>>>()?);
    if scored.is_empty() {
        return Err(CliError::data(&a.pred, "no .field or .mosaic files"));
    }

    let mut groups: BTreeMap<(String, String), Group> = BTreeMap::new();
    for s in scored {
        if s.mean.len() != s.truth.len() {
            return Err(CliError::data(&a.pred, format!("{} {} grid does not match the truth chip", s.method, s.sensor)));
        }
        let base = train_mean(&s.sensor).ok_or_else(|| CliError::data(&a.truth, format!("no training chips for {}", s.sensor)))?;
        let g = groups.entry((s.sensor.clone(), s.method.clone())).or_default();
        g.bins.add(&s.uncertainty_pct, &s.truth, Some(&s.valid))?;
        g.baseline.extend(std::iter::repeat_n(base, s.truth.len()));
        g.pred.extend(s.mean);
        g.truth.extend(s.truth);
        g.valid.extend(s.valid);
        g.chips += 1;
    }

    let mut t1 = Vec::new();
    let mut t2 = Vec::new();
    let mut baseline_done = Vec::new();
    for ((sensor, method), g) in &groups {
        t1.extend(table1_rows(method, sensor, &g.bins));
        let acc = accuracy(&g.pred, &g.truth, Some(&g.valid))?;
        t2.push(Table2Row { sensor: sensor.clone(), method: method.clone(), r2: acc.r2, rmse_pct: acc.rmse_pct, mae_pct: acc.mae_pct, n_chips: g.chips });
        if !baseline_done.contains(sensor) {
            let b = accuracy(&g.baseline, &g.truth, Some(&g.valid))?;
            t2.push(Table2Row { sensor: sensor.clone(), method: BASELINE_METHOD.into(), r2: b.r2, rmse_pct: b.rmse_pct, mae_pct: b.mae_pct, n_chips: g.chips });
            baseline_done.push(sensor.clone());
        }
        eprintln!(
            "{method} on {sensor}: r2 {:.3}, mae {:.2} pts, marginal-zone uncertainty above both extremes: {}",
            acc.r2,
            acc.mae_pct,
            if g.bins.marginal_exceeds_extremes() { "yes" } else { "no" }
        );
    }
    let out = ensure_dir(&a.out)?;
    write_table1(&out.join(TABLE1_NAME), &t1)?;
    write_table2(&out.join(TABLE2_NAME), &t2)?;
    Ok(out)
}
