//! Predictive uncertainty from repeated stochastic forward passes.
//!
//! All three predictors reduce a set of SIC maps with [`predictive_moments`]:
//! Bayesian weight sampling ([`bbb_predict`]), MC dropout
//! ([`mc_dropout_predict`]) and epoch ensembles ([`ensemble_predict`]).

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rayon::prelude::*;

use crate::container::{Container, NamedTensor};
use crate::error::{Error, Result};
use crate::net::model::{Model, ModelKind, Weights};
use crate::net::DropoutPlan;
use crate::real::Real;
use crate::synth::Sensor;
use crate::tape::DropoutMode;
use crate::tensor::Tensor;

/// Default number of stochastic passes.
pub const DEFAULT_SAMPLES: usize = 32;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum UqMethod {
    Bbb,
    McDropout,
    EpochEnsemble,
}

impl UqMethod {
    pub const ALL: [UqMethod; 3] = [UqMethod::Bbb, UqMethod::McDropout, UqMethod::EpochEnsemble];

    pub fn as_str(self) -> &'static str {
        match self {
            UqMethod::Bbb => "bbb",
            UqMethod::McDropout => "mc-dropout",
            UqMethod::EpochEnsemble => "epoch-ensemble",
        }
    }
}

impl fmt::Display for UqMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for UqMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        UqMethod::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown method `{s}` (expected bbb, mc-dropout or epoch-ensemble)")))
    }
}

/// Per-pixel mean and population variance of `count` maps.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments {
    pub height: usize,
    pub width: usize,
    pub count: usize,
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
}

/// Two-pass reduction of equally shaped maps. Values are sorted per pixel so
/// the result does not depend on sample order. Only the last two dimensions
/// are kept as the grid shape.
pub fn predictive_moments<T: Real>(samples: &[Tensor<T>]) -> Result<Moments> {
    if samples.len() < 2 {
        return Err(Error::TooFew { what: "predictive samples", need: 2, got: samples.len() });
    }
    let shape = samples[0].shape();
    for s in &samples[1..] {
        if s.shape() != shape {
            return Err(Error::Dimension { op: "predictive_moments", lhs: shape.to_vec(), rhs: s.shape().to_vec() });
        }
    }
    let r = shape.len();
    let (height, width) = if r >= 2 { (shape[r - 2], shape[r - 1]) } else { (1, shape[0]) };
    let count = samples.len();
    let n = samples[0].len();
    let mut mean = Vec::with_capacity(n);
    let mut variance = Vec::with_capacity(n);
    let mut column = vec![0.0; count];
    for i in 0..n {
        for (c, s) in column.iter_mut().zip(samples) {
            *c = s.data()[i].f64();
        }
        column.sort_by(f64::total_cmp);
        // shifted by the minimum so constant columns give exactly zero variance
        let lo = column[0];
        let d = column.iter().map(|c| c - lo).sum::<f64>() / count as f64;
        let v = column.iter().map(|c| (c - lo - d) * (c - lo - d)).sum::<f64>() / count as f64;
        mean.push(lo + d);
        variance.push(v);
    }
    Ok(Moments { height, width, count, mean, variance })
}

/// Mean SIC and uncertainty of one chip.
#[derive(Clone, Debug, PartialEq)]
pub struct UncertaintyField {
    pub method: UqMethod,
    pub sensor: Option<Sensor>,
    pub scene: Option<usize>,
    /// Number of stochastic passes (ensemble members for epoch ensembles).
    pub samples: usize,
    pub seed: u64,
    pub height: usize,
    pub width: usize,
    pub mean: Vec<f32>,
    pub variance: Vec<f32>,
    /// Pixels inside the sensor swath; `None` means all.
    pub coverage: Option<Vec<bool>>,
}

impl UncertaintyField {
    pub fn from_moments(m: &Moments, method: UqMethod, seed: u64) -> Self {
        Self {
            method,
            sensor: None,
            scene: None,
            samples: m.count,
            seed,
            height: m.height,
            width: m.width,
            mean: m.mean.iter().map(|&v| v.clamp(0.0, 1.0) as f32).collect(),
            variance: m.variance.iter().map(|&v| v as f32).collect(),
            coverage: None,
        }
    }

    /// `100 * sigma` per pixel.
    pub fn uncertainty_pct(&self) -> Vec<f64> {
        self.variance.iter().map(|&v| 100.0 * (v as f64).sqrt()).collect()
    }

    pub fn is_valid(&self, i: usize) -> bool {
        self.coverage.as_ref().is_none_or(|c| c[i])
    }

    /// `scene_0007_rcm_bbb.field` style name.
    pub fn file_name(&self) -> String {
        let scene = self.scene.map(|s| format!("scene_{s:04}")).unwrap_or_else(|| "field".into());
        let sensor = self.sensor.map(|s| format!("_{s}")).unwrap_or_default();
        format!("{scene}{sensor}_{}.field", self.method)
    }

    pub fn to_container(&self) -> Container {
        let mut c = Container::default();
        c.meta.insert("content".into(), "field".into());
        c.meta.insert("method".into(), self.method.to_string());
        c.meta.insert("samples".into(), self.samples.to_string());
        c.meta.insert("seed".into(), self.seed.to_string());
        if let Some(s) = self.sensor {
            c.meta.insert("sensor".into(), s.to_string());
        }
        if let Some(s) = self.scene {
            c.meta.insert("scene".into(), s.to_string());
        }
        let shape = vec![self.height, self.width];
        c.tensors.push(NamedTensor { name: "mean".into(), shape: shape.clone(), data: self.mean.clone() });
        c.tensors.push(NamedTensor { name: "variance".into(), shape: shape.clone(), data: self.variance.clone() });
        if let Some(cov) = &self.coverage {
            let data = cov.iter().map(|&v| if v { 1.0 } else { 0.0 }).collect();
            c.tensors.push(NamedTensor { name: "coverage".into(), shape, data });
        }
        c
    }

    pub fn from_container(c: &Container, path: &Path) -> Result<Self> {
        let malformed = |detail: &str| Error::Malformed { path: path.to_path_buf(), detail: detail.to_string() };
        if c.meta_get("content") != Some("field") {
            return Err(malformed("not an uncertainty field"));
        }
        let method = c.meta_get("method").ok_or_else(|| malformed("missing method"))?.parse()?;
        let samples = c.meta_get("samples").and_then(|v| v.parse().ok()).ok_or_else(|| malformed("samples"))?;
        let seed = c.meta_get("seed").and_then(|v| v.parse().ok()).ok_or_else(|| malformed("seed"))?;
        let sensor = c.meta_get("sensor").map(str::parse).transpose()?;
        let scene = c.meta_get("scene").map(|v| v.parse().map_err(|_| malformed("scene"))).transpose()?;
        let mean = c.tensor("mean").ok_or_else(|| malformed("missing `mean`"))?;
        let variance = c.tensor("variance").ok_or_else(|| malformed("missing `variance`"))?;
        if mean.shape.len() != 2 || variance.shape != mean.shape {
            return Err(Error::FormatDimension {
                path: path.to_path_buf(),
                detail: format!("mean {:?} and variance {:?}", mean.shape, variance.shape),
            });
        }
        if mean.data.iter().any(|v| !(0.0..=1.0).contains(v)) || variance.data.iter().any(|&v| v < 0.0) {
            return Err(malformed("mean outside [0, 1] or negative variance"));
        }
        let coverage = match c.tensor("coverage") {
            Some(t) if t.shape == mean.shape => Some(t.data.iter().map(|&v| v != 0.0).collect()),
            Some(t) => {
                return Err(Error::FormatDimension { path: path.to_path_buf(), detail: format!("coverage {:?}", t.shape) })
            }
            None => None,
        };
        Ok(Self {
            method,
            sensor,
            scene,
            samples,
            seed,
            height: mean.shape[0],
            width: mean.shape[1],
            mean: mean.data.clone(),
            variance: variance.data.clone(),
            coverage,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?, path)
    }
}

/// Splits `S` batched predictions `(B, 1, H, W)` into one field per chip.
fn reduce<T: Real>(preds: &[Tensor<T>], method: UqMethod, seed: u64) -> Result<Vec<UncertaintyField>> {
    let shape = preds[0].shape().to_vec();
    let (b, per) = (shape[0], preds[0].len() / shape[0]);
    let grid = [shape[2], shape[3]];
    (0..b)
        .map(|i| {
            let chip: Vec<Tensor<T>> =
                preds.iter().map(|p| Tensor::new(&grid, p.data()[i * per..(i + 1) * per].to_vec())).collect::<Result<_>>()?;
            Ok(UncertaintyField::from_moments(&predictive_moments(&chip)?, method, seed))
        })
        .collect()
}

fn check_batch<T: Real>(chips: &Tensor<T>) -> Result<()> {
    if chips.shape().len() != 4 {
        return Err(Error::Dimension { op: "predict", lhs: chips.shape().to_vec(), rhs: vec![0, 0, 0, 0] });
    }
    Ok(())
}

/// `S` passes with weights drawn from the posterior under seeds `seed + i`.
/// Returns one field per chip of the `(B, C, H0, W0)` batch.
pub fn bbb_predict<T: Real>(model: &Model<T>, chips: &Tensor<T>, samples: usize, seed: u64) -> Result<Vec<UncertaintyField>> {
    if model.kind != ModelKind::Bayesian {
        return Err(Error::MethodMismatch(format!(
            "bbb needs a bayesian checkpoint, got a {} one",
            model.kind.as_str()
        )));
    }
    if samples < 2 {
        return Err(Error::TooFew { what: "predictive samples", need: 2, got: samples });
    }
    check_batch(chips)?;
    let preds: Vec<Tensor<T>> = (0..samples as u64)
        .into_par_iter()
        .map(|i| model.predict(chips, Weights::Sample(seed.wrapping_add(i)), &DropoutPlan::off()))
        .collect::<Result<_>>()?;
    reduce(&preds, UqMethod::Bbb, seed)
}

/// `S` passes with dropout active at inference under seeds `seed + i`.
pub fn mc_dropout_predict<T: Real>(
    model: &Model<T>,
    chips: &Tensor<T>,
    samples: usize,
    p: f64,
    seed: u64,
) -> Result<Vec<UncertaintyField>> {
    if samples < 2 {
        return Err(Error::TooFew { what: "predictive samples", need: 2, got: samples });
    }
    let seeds: Vec<u64> = (0..samples as u64).map(|i| seed.wrapping_add(i)).collect();
    mc_dropout_predict_with_seeds(model, chips, p, &seeds, seed)
}

/// MC dropout with explicit per-pass dropout seeds.
pub fn mc_dropout_predict_with_seeds<T: Real>(
    model: &Model<T>,
    chips: &Tensor<T>,
    p: f64,
    seeds: &[u64],
    tag_seed: u64,
) -> Result<Vec<UncertaintyField>> {
    if p <= 0.0 {
        return Err(Error::Degenerate {
            op: "mc-dropout",
            detail: "dropout probability is 0, every pass would be identical".into(),
        });
    }
    if p >= 1.0 {
        return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
    }
    check_batch(chips)?;
    let preds: Vec<Tensor<T>> = seeds
        .par_iter()
        .map(|&s| model.predict(chips, Weights::Mean, &DropoutPlan { p, mode: DropoutMode::InferStochastic, seed: s }))
        .collect::<Result<_>>()?;
    reduce(&preds, UqMethod::McDropout, tag_seed)
}

/// One deterministic pass per snapshot (posterior means for Bayesian snapshots).
pub fn ensemble_predict<T: Real>(snapshots: &[Model<T>], chips: &Tensor<T>) -> Result<Vec<UncertaintyField>> {
    if snapshots.len() < 2 {
        return Err(Error::TooFew { what: "ensemble snapshots", need: 2, got: snapshots.len() });
    }
    check_batch(chips)?;
    let preds: Vec<Tensor<T>> =
        snapshots.par_iter().map(|m| m.predict(chips, Weights::Mean, &DropoutPlan::off())).collect::<Result<_>>()?;
    reduce(&preds, UqMethod::EpochEnsemble, 0)
}
