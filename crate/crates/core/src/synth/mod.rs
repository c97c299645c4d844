//! Synthetic multi-sensor scenes with known sea ice concentration.
//!
//! A scene starts from a smooth random SIC field ([`gen_truth`]). Each sensor
//! forward model renders two channels from it: dual-polarized SAR for
//! Sentinel-1 and RCM ([`render_sar`]) and 89 GHz brightness temperatures for
//! AMSR2 ([`render_pm`]). A blurred, noisy copy of the truth stands in for the
//! coarse passive-microwave labels used for weak supervision ([`weak_label`]).

mod chip_io;
mod dataset;
mod field;
mod sensors;
mod truth;

pub use chip_io::{decode_chip, encode_chip, read_chip, write_chip, CHIP_MAGIC};
pub use dataset::{
    build_dataset, build_dataset_with, load_records, read_manifest, write_dataset, ChipRecord, ManifestRow, Split,
    SplitFractions, MANIFEST_FILE,
};
pub use sensors::{render, render_pm, render_sar, Sensor, SensorChip};
pub use truth::{gen_truth, gen_truth_with, weak_label, weak_label_with, SceneTruth};

/// Every tunable constant of the synthetic forward models.
#[derive(Clone, Debug, PartialEq)]
pub struct SynthConfig {
    /// Cosine modes summed into the truth field.
    pub truth_modes: usize,
    /// Spatial frequency range of those modes, in cycles per chip.
    pub truth_cycles: (f64, f64),
    /// Slope of the squashing map from the unit-variance field to SIC; values
    /// above 0.5 saturate into open-water and pack plateaus.
    pub truth_contrast: f64,
    /// Half-width of the per-scene uniform SIC offset.
    pub truth_offset: f64,

    /// Linear backscatter tie points `(water, ice)` for HH and HV.
    pub sar_hh: (f64, f64),
    pub sar_hv: (f64, f64),
    /// Equivalent number of looks of the multiplicative gamma speckle; `None` disables speckle.
    pub sar_looks: Option<f64>,
    /// Peak additive wind-streak backscatter over open water (HH; HV gets a fifth).
    pub wind_streak: f64,
    /// Row period of the RCM noise-floor banding.
    pub rcm_band_period: usize,
    /// Banding amplitude for `(HH, HV)`.
    pub rcm_band: (f64, f64),
    /// Relative gain change from near to far range across the chip.
    pub rcm_gain_ramp: f64,
    /// `(centre, scale)` in dB used to standardize HH and HV.
    pub sar_db_norm: [(f64, f64); 2],

    /// 89 GHz brightness tie points `(water, ice)` in kelvin.
    pub pm_h: (f64, f64),
    pub pm_v: (f64, f64),
    /// Gaussian blur standing in for the coarse footprint, in pixels; 0 disables.
    pub pm_blur: f64,
    /// Number of cloud blobs per scene.
    pub pm_clouds: usize,
    /// Peak cloud brightening `(H, V)` in kelvin.
    pub pm_cloud_k: (f64, f64),
    /// Radiometer noise standard deviation in kelvin.
    pub pm_noise_k: f64,
    /// `(centre, scale)` in kelvin used to standardize H and V.
    pub pm_norm: [(f64, f64); 2],

    /// Blur of the weak label in pixels; 0 disables.
    pub label_blur: f64,
    /// Standard deviation of the smooth weak-label perturbation.
    pub label_noise: f64,

    /// Range of the fraction of each chip covered by a sensor swath, `None` for full coverage.
    pub swath_sentinel1: Option<(f64, f64)>,
    pub swath_rcm: Option<(f64, f64)>,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            truth_modes: 12,
            truth_cycles: (0.4, 2.5),
            truth_contrast: 0.72,
            truth_offset: 0.2,
            sar_hh: (0.03, 0.12),
            sar_hv: (0.004, 0.02),
            sar_looks: Some(4.0),
            wind_streak: 0.05,
            rcm_band_period: 8,
            rcm_band: (0.012, 0.006),
            rcm_gain_ramp: 0.6,
            sar_db_norm: [(-12.0, 5.0), (-20.0, 5.0)],
            pm_h: (185.0, 240.0),
            pm_v: (220.0, 250.0),
            pm_blur: 3.0,
            pm_clouds: 3,
            pm_cloud_k: (25.0, 12.0),
            pm_noise_k: 0.7,
            pm_norm: [(212.5, 27.5), (235.0, 15.0)],
            label_blur: 3.0,
            label_noise: 0.05,
            swath_sentinel1: Some((0.3, 0.9)),
            swath_rcm: Some((0.5, 1.0)),
        }
    }
}
