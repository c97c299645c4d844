use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Gamma, StandardNormal};

use super::field::{gaussian_blur, swath};
use super::truth::SceneTruth;
use super::SynthConfig;
use crate::error::{Error, Result};
use crate::seed;

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Sensor {
    Sentinel1,
    Rcm,
    Amsr2,
}

impl Sensor {
    /// Default fusion priority, top layer first.
    pub const ALL: [Sensor; 3] = [Sensor::Sentinel1, Sensor::Rcm, Sensor::Amsr2];

    pub fn as_str(self) -> &'static str {
        match self {
            Sensor::Sentinel1 => "sentinel1",
            Sensor::Rcm => "rcm",
            Sensor::Amsr2 => "amsr2",
        }
    }

    pub fn code(self) -> u8 {
        match self {
            Sensor::Sentinel1 => 0,
            Sensor::Rcm => 1,
            Sensor::Amsr2 => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        Sensor::ALL.get(code as usize).copied()
    }

    pub fn channels(self) -> usize {
        2
    }

    pub fn channel_names(self) -> [&'static str; 2] {
        match self {
            Sensor::Sentinel1 | Sensor::Rcm => ["HH", "HV"],
            Sensor::Amsr2 => ["89H", "89V"],
        }
    }
}

impl fmt::Display for Sensor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Sensor {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Sensor::ALL
            .into_iter()
            .find(|x| x.as_str() == s)
            .ok_or_else(|| Error::Config(format!("unknown sensor `{s}` (expected sentinel1, rcm or amsr2)")))
    }
}

/// Standardized channels of one sensor over one scene.
#[derive(Clone, Debug, PartialEq)]
pub struct SensorChip {
    pub sensor: Sensor,
    pub side: usize,
    pub seed: u64,
    pub channels: Vec<Vec<f64>>,
    /// Pixels inside the sensor's swath.
    pub coverage: Vec<bool>,
}

pub fn render(cfg: &SynthConfig, truth: &SceneTruth, sensor: Sensor, seed: u64) -> Result<SensorChip> {
    match sensor {
        Sensor::Amsr2 => Ok(render_pm(cfg, truth, seed)),
        _ => render_sar(cfg, truth, sensor, seed),
    }
}

fn coverage(cfg: &SynthConfig, sensor: Sensor, side: usize, seed: u64) -> Vec<bool> {
    let range = match sensor {
        Sensor::Sentinel1 => cfg.swath_sentinel1,
        Sensor::Rcm => cfg.swath_rcm,
        Sensor::Amsr2 => None,
    };
    match range {
        Some(r) => swath(&mut seed::rng(seed, "swath", 0), side, r),
        None => vec![true; side * side],
    }
}

/// Dual-polarized backscatter: tie-point mixing, wind streaks over water,
/// gamma speckle and, for RCM, noise-floor banding and a range gain ramp.
pub fn render_sar(cfg: &SynthConfig, truth: &SceneTruth, sensor: Sensor, seed: u64) -> Result<SensorChip> {
    if sensor == Sensor::Amsr2 {
        return Err(Error::Config("amsr2 is not a SAR sensor".into()));
    }
    let side = truth.side;
    let streaks = wind_streaks(seed, side);
    let mut channels = Vec::with_capacity(2);
    for (c, (tie, band)) in [(cfg.sar_hh, cfg.rcm_band.0), (cfg.sar_hv, cfg.rcm_band.1)].into_iter().enumerate() {
        let streak_amp = if c == 0 { cfg.wind_streak } else { cfg.wind_streak / 5.0 };
        let mut rng = seed::rng(seed, "speckle", c as u64);
        let speckle = cfg.sar_looks.map(|l| Gamma::new(l, 1.0 / l).expect("positive looks"));
        let (centre, scale) = cfg.sar_db_norm[c];
        let mut grid = Vec::with_capacity(side * side);
        for (i, &s) in truth.sic.iter().enumerate() {
            let (x, y) = (i % side, i / side);
            let water = 1.0 - s;
            let mut v = tie.0 + (tie.1 - tie.0) * s + streak_amp * water * water * streaks[i];
            if let Some(g) = &speckle {
                v *= rng.sample(g);
            }
            if sensor == Sensor::Rcm {
                v += band * 0.5 * (1.0 + (2.0 * PI * y as f64 / cfg.rcm_band_period as f64).cos());
                v *= 1.0 + cfg.rcm_gain_ramp * (0.5 - x as f64 / (side - 1) as f64);
            }
            let db = 10.0 * v.max(1e-5).log10();
            grid.push((db - centre) / scale);
        }
        channels.push(grid);
    }
    Ok(SensorChip { sensor, side, seed, channels, coverage: coverage(cfg, sensor, side, seed) })
}

/// Anisotropic streak texture in `[0, 1]`: long along a random wind
/// direction, narrow across it.
fn wind_streaks(seed: u64, side: usize) -> Vec<f64> {
    let mut rng = seed::rng(seed, "wind", 0);
    let theta: f64 = rng.random_range(0.0..PI);
    let (ax, ay) = (theta.cos(), theta.sin());
    let waves: Vec<(f64, f64, f64)> = (0..4)
        .map(|_| (rng.random_range(0.3..1.0), rng.random_range(6.0..12.0), rng.random_range(0.0..2.0 * PI)))
        .collect();
    let n = side as f64;
    (0..side * side)
        .map(|i| {
            let (u, v) = ((i % side) as f64 / n, (i / side) as f64 / n);
            let along = u * ax + v * ay;
            let across = -u * ay + v * ax;
            let s: f64 = waves.iter().map(|&(kl, kc, ph)| (2.0 * PI * (kl * along + kc * across) + ph).cos()).sum::<f64>() / 4.0;
            s.max(0.0)
        })
        .collect()
}

/// 89 GHz brightness temperatures: tie-point mixing, footprint blur, cloud
/// contamination and radiometer noise.
pub fn render_pm(cfg: &SynthConfig, truth: &SceneTruth, seed: u64) -> SensorChip {
    let side = truth.side;
    let mut rng = seed::rng(seed, "clouds", 0);
    let blobs: Vec<(f64, f64, f64, f64)> = (0..cfg.pm_clouds)
        .map(|_| {
            (
                rng.random_range(0.0..side as f64),
                rng.random_range(0.0..side as f64),
                rng.random_range(0.06..0.2) * side as f64,
                rng.random_range(0.3..1.0),
            )
        })
        .collect();
    let cloud: Vec<f64> = (0..side * side)
        .map(|i| {
            let (x, y) = ((i % side) as f64, (i / side) as f64);
            blobs.iter().map(|&(cx, cy, r, a)| a * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * r * r)).exp()).sum()
        })
        .collect();
    let sensor = Sensor::Amsr2;
    let mut channels = Vec::with_capacity(2);
    for (c, (tie, cloud_k)) in [(cfg.pm_h, cfg.pm_cloud_k.0), (cfg.pm_v, cfg.pm_cloud_k.1)].into_iter().enumerate() {
        let tb: Vec<f64> = truth.sic.iter().map(|&s| tie.0 + (tie.1 - tie.0) * s).collect();
        let tb = gaussian_blur(&tb, side, cfg.pm_blur);
        let mut noise = seed::rng(seed, "radiometer", c as u64);
        let (centre, scale) = cfg.pm_norm[c];
        let grid = tb
            .iter()
            .zip(&truth.sic)
            .zip(&cloud)
            .map(|((&t, &s), &cl)| {
                let mut v = t + cloud_k * cl * (1.0 - 0.7 * s);
                if cfg.pm_noise_k > 0.0 {
                    v += cfg.pm_noise_k * noise.sample::<f64, _>(StandardNormal);
                }
                (v - centre) / scale
            })
            .collect();
        channels.push(grid);
    }
    SensorChip { sensor, side, seed, channels, coverage: coverage(cfg, sensor, side, seed) }
}
