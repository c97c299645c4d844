use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::sensors::{render, Sensor};
use super::truth::{gen_truth_with, weak_label_with};
use super::{read_chip, write_chip, SynthConfig};
use crate::error::{Error, Result};
use crate::real::Real;
use crate::seed;
use crate::tensor::Tensor;
use crate::train::{ConfidenceClass, TrainSample};

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }

    pub fn code(self) -> u8 {
        self as u8
    }

    pub fn from_code(c: u8) -> Option<Self> {
        [Split::Train, Split::Val, Split::Test].get(c as usize).copied()
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::Config(format!("unknown split `{other}`"))),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SplitFractions {
    pub train: f64,
    pub val: f64,
    pub test: f64,
}

impl Default for SplitFractions {
    fn default() -> Self {
        Self { train: 0.7, val: 0.1, test: 0.2 }
    }
}

impl SplitFractions {
    pub fn validate(&self) -> Result<()> {
        let parts = [self.train, self.val, self.test];
        if parts.iter().any(|f| !f.is_finite() || *f < 0.0) || (parts.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return Err(Error::Config(format!("split fractions {parts:?} must be non-negative and sum to 1")));
        }
        Ok(())
    }

    /// Scene counts per split. Every split with a positive fraction gets at least one scene.
    pub fn counts(&self, n: usize) -> [usize; 3] {
        let fr = [self.train, self.val, self.test];
        let mut c = [(fr[0] * n as f64).round() as usize, (fr[1] * n as f64).round() as usize, 0];
        c[1] = c[1].min(n - c[0].min(n));
        c[0] = c[0].min(n);
        c[2] = n - c[0] - c[1];
        for i in 0..3 {
            if fr[i] > 0.0 && c[i] == 0 {
                let donor = (0..3).max_by_key(|&j| c[j]).expect("three splits");
                if c[donor] > 1 {
                    c[donor] -= 1;
                    c[i] += 1;
                }
            }
        }
        c
    }
}

/// One sensor's view of one scene with its labels.
#[derive(Clone, Debug, PartialEq)]
pub struct ChipRecord {
    pub scene_id: usize,
    pub split: Split,
    /// Scene seed; sensor and label streams are derived from it.
    pub seed: u64,
    pub sensor: Sensor,
    pub side: usize,
    pub channels: Vec<Vec<f32>>,
    pub weak_label: Vec<f32>,
    pub classes: Vec<ConfidenceClass>,
    pub truth: Vec<f32>,
    pub coverage: Vec<bool>,
}

impl ChipRecord {
    pub fn file_name(&self) -> String {
        format!("scene_{:04}_{}.sicc", self.scene_id, self.sensor)
    }

    /// `(C, side, side)` channel tensor.
    pub fn chip_tensor<T: Real>(&self) -> Result<Tensor<T>> {
        let data = self.channels.iter().flatten().map(|&v| T::of(v as f64)).collect();
        Tensor::new(&[self.channels.len(), self.side, self.side], data)
    }

    pub fn to_train_sample<T: Real>(&self) -> Result<TrainSample<T>> {
        Ok(TrainSample {
            chip: self.chip_tensor()?,
            label: self.weak_label.iter().map(|&v| T::of(v as f64)).collect(),
            classes: self.classes.clone(),
        })
    }
}

pub fn build_dataset(n_scenes: usize, seed: u64, side: usize, fractions: SplitFractions) -> Result<Vec<ChipRecord>> {
    build_dataset_with(&SynthConfig::default(), n_scenes, seed, side, fractions)
}

/// Generates `n_scenes` scenes, each rendered by every sensor. Records are
/// ordered by scene id, then sensor priority.
pub fn build_dataset_with(
    cfg: &SynthConfig,
    n_scenes: usize,
    seed: u64,
    side: usize,
    fractions: SplitFractions,
) -> Result<Vec<ChipRecord>> {
    if n_scenes < 3 {
        return Err(Error::TooFew { what: "scenes", need: 3, got: n_scenes });
    }
    fractions.validate()?;
    let counts = fractions.counts(n_scenes);
    let mut ids: Vec<usize> = (0..n_scenes).collect();
    ids.shuffle(&mut seed::rng(seed, "split", 0));
    let mut split_of = vec![Split::Train; n_scenes];
    for (rank, &id) in ids.iter().enumerate() {
        split_of[id] = if rank < counts[0] {
            Split::Train
        } else if rank < counts[0] + counts[1] {
            Split::Val
        } else {
            Split::Test
        };
    }
    let scenes: Vec<Result<Vec<ChipRecord>>> = (0..n_scenes)
        .into_par_iter()
        .map(|id| {
            let scene_seed = seed::derive(seed, "scene", id as u64);
            let truth = gen_truth_with(cfg, scene_seed, side)?;
            let weak = weak_label_with(cfg, &truth, scene_seed);
            Sensor::ALL
                .iter()
                .map(|&sensor| {
                    let chip = render(cfg, &truth, sensor, seed::derive(scene_seed, sensor.as_str(), 0))?;
                    Ok(ChipRecord {
                        scene_id: id,
                        split: split_of[id],
                        seed: scene_seed,
                        sensor,
                        side,
                        channels: chip.channels.iter().map(|c| c.iter().map(|&v| v as f32).collect()).collect(),
                        weak_label: weak.iter().map(|&v| v as f32).collect(),
                        classes: truth.classes.clone(),
                        truth: truth.sic.iter().map(|&v| v as f32).collect(),
                        coverage: chip.coverage,
                    })
                })
                .collect()
        })
        .collect();
    let mut out = Vec::with_capacity(n_scenes * Sensor::ALL.len());
    for s in scenes {
        out.extend(s?);
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ManifestRow {
    pub scene_id: usize,
    pub split: Split,
    pub seed: u64,
    /// Chip file relative to the manifest's directory.
    pub path: String,
}

/// Writes one SICC1 file per record plus `manifest.csv`.
pub fn write_dataset(records: &[ChipRecord], dir: &Path) -> Result<Vec<ManifestRow>> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    records.par_iter().try_for_each(|r| write_chip(&dir.join(r.file_name()), r))?;
    let rows: Vec<ManifestRow> = records
        .iter()
        .map(|r| ManifestRow { scene_id: r.scene_id, split: r.split, seed: r.seed, path: r.file_name() })
        .collect();
    let path = dir.join(MANIFEST_FILE);
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["scene_id", "split", "seed", "path"]).map_err(|e| csv_error(&path, e))?;
    for row in &rows {
        w.write_record([row.scene_id.to_string(), row.split.to_string(), row.seed.to_string(), row.path.clone()])
            .map_err(|e| csv_error(&path, e))?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Malformed { path: path.clone(), detail: e.to_string() })?;
    crate::container::write_atomic(&path, &bytes)?;
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::Malformed { path: path.to_path_buf(), detail: e.to_string() }
}

pub fn read_manifest(dir: &Path) -> Result<Vec<ManifestRow>> {
    let path = dir.join(MANIFEST_FILE);
    let file = std::fs::File::open(&path).map_err(|e| Error::io(&path, e))?;
    let mut reader = csv::Reader::from_reader(file);
    let header = reader.headers().map_err(|e| csv_error(&path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["scene_id", "split", "seed", "path"] {
        return Err(Error::Malformed { path, detail: format!("unexpected header {:?}", header.iter().collect::<Vec<_>>()) });
    }
    let mut rows = Vec::new();
    for rec in reader.records() {
        let rec = rec.map_err(|e| csv_error(&path, e))?;
        let bad = |what: &str| Error::Malformed { path: path.clone(), detail: format!("bad {what} in row {rec:?}") };
        rows.push(ManifestRow {
            scene_id: rec[0].parse().map_err(|_| bad("scene_id"))?,
            split: rec[1].parse().map_err(|_| bad("split"))?,
            seed: rec[2].parse().map_err(|_| bad("seed"))?,
            path: rec[3].to_string(),
        });
    }
    Ok(rows)
}

/// Loads the chips of a dataset directory, optionally filtered by split and sensor.
pub fn load_records(dir: &Path, split: Option<Split>, sensor: Option<Sensor>) -> Result<Vec<ChipRecord>> {
    let rows: Vec<ManifestRow> =
        read_manifest(dir)?.into_iter().filter(|r| split.is_none_or(|s| s == r.split)).collect();
    let paths: Vec<PathBuf> = rows.iter().map(|r| dir.join(&r.path)).collect();
    let records: Vec<Result<ChipRecord>> = paths.par_iter().map(|p| read_chip(p)).collect();
    let mut out = Vec::with_capacity(records.len());
    for (row, rec) in rows.iter().zip(records) {
        let rec = rec?;
        if rec.scene_id != row.scene_id || rec.split != row.split {
            return Err(Error::Malformed {
                path: dir.join(&row.path),
                detail: "chip header disagrees with the manifest".into(),
            });
        }
        if sensor.is_none_or(|s| s == rec.sensor) {
            out.push(rec);
        }
    }
    Ok(out)
}
