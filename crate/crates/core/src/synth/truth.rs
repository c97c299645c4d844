use rand::Rng;

use super::field::{cosine_field, gaussian_blur};
use super::SynthConfig;
use crate::error::{Error, Result};
use crate::seed;
use crate::train::ConfidenceClass;

/// Ground-truth SIC of one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SceneTruth {
    pub side: usize,
    pub seed: u64,
    /// Row-major SIC fractions in `[0, 1]`.
    pub sic: Vec<f64>,
    pub classes: Vec<ConfidenceClass>,
}

pub fn gen_truth(seed: u64, side: usize) -> Result<SceneTruth> {
    gen_truth_with(&SynthConfig::default(), seed, side)
}

pub fn gen_truth_with(cfg: &SynthConfig, seed: u64, side: usize) -> Result<SceneTruth> {
    if side < 16 {
        return Err(Error::Config(format!("chip side {side} is below the minimum of 16")));
    }
    let mut rng = seed::rng(seed, "truth", 0);
    let offset = if cfg.truth_offset > 0.0 { rng.random_range(-cfg.truth_offset..cfg.truth_offset) } else { 0.0 };
    let field = cosine_field(&mut rng, side, cfg.truth_modes, cfg.truth_cycles);
    let sic: Vec<f64> = field.iter().map(|f| (0.5 + offset + cfg.truth_contrast * f).clamp(0.0, 1.0)).collect();
    let classes = sic.iter().map(|&s| ConfidenceClass::of_sic(s)).collect();
    Ok(SceneTruth { side, seed, sic, classes })
}

/// Coarse, imperfect SIC standing in for a passive-microwave retrieval.
pub fn weak_label(truth: &SceneTruth, seed: u64) -> Vec<f64> {
    weak_label_with(&SynthConfig::default(), truth, seed)
}

pub fn weak_label_with(cfg: &SynthConfig, truth: &SceneTruth, seed: u64) -> Vec<f64> {
    let blurred = gaussian_blur(&truth.sic, truth.side, cfg.label_blur);
    if cfg.label_noise <= 0.0 {
        return blurred.into_iter().map(|v| v.clamp(0.0, 1.0)).collect();
    }
    let mut rng = seed::rng(seed, "weak-label", 0);
    let noise = cosine_field(&mut rng, truth.side, 6, (1.0, 4.0));
    blurred.iter().zip(&noise).map(|(b, n)| (b + cfg.label_noise * n).clamp(0.0, 1.0)).collect()
}
