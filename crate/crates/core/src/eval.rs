//! Per-class uncertainty tables, accuracy metrics and map rendering.

use std::fmt::Write as _;
use std::ops::Range;
use std::path::{Path, PathBuf};

use crate::container::write_atomic;
use crate::error::{Error, Result};
use crate::uq::UncertaintyField;

/// Ten SIC classes of ten percentage points each.
pub const BIN_COUNT: usize = 10;

/// Gray level reserved for no-data pixels in rendered maps.
pub const PGM_NODATA: u32 = 256;

pub const TABLE1_HEADER: [&str; 6] = ["method", "sensor", "bin_lo", "bin_hi", "mean_uncertainty_pct", "n_pixels"];
pub const TABLE2_HEADER: [&str; 6] = ["sensor", "method", "r2", "rmse_pct", "mae_pct", "n_chips"];

/// Class of a SIC fraction: left-closed bins of ten points, the last one
/// closed. Values within 1e-5 points of an edge snap onto it, so single-precision
/// tenths such as `0.7f32` land in the bin they name.
pub fn bin_index(sic: f64) -> Result<usize> {
    if !(sic.is_finite() && (-1e-9..=1.0 + 1e-9).contains(&sic)) {
        return Err(Error::Config(format!("reference SIC {sic} outside [0, 1]")));
    }
    let mut pct = 100.0 * sic;
    let edge = (pct / 10.0).round() * 10.0;
    if (pct - edge).abs() < 1e-5 {
        pct = edge;
    }
    Ok(((pct / 10.0).floor().max(0.0) as usize).min(BIN_COUNT - 1))
}

/// Running per-bin sums of uncertainty.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct BinStats {
    pub sum: [f64; BIN_COUNT],
    pub count: [usize; BIN_COUNT],
}

impl BinStats {
    /// Adds every valid pixel of `uncertainty_pct`, binned by `reference`.
    pub fn add(&mut self, uncertainty_pct: &[f64], reference: &[f64], mask: Option<&[bool]>) -> Result<()> {
        if uncertainty_pct.len() != reference.len() || mask.is_some_and(|m| m.len() != reference.len()) {
            return Err(Error::Dimension {
                op: "bin_uncertainty",
                lhs: vec![uncertainty_pct.len()],
                rhs: vec![reference.len()],
            });
        }
        for (i, (&u, &r)) in uncertainty_pct.iter().zip(reference).enumerate() {
            if mask.is_none_or(|m| m[i]) {
                let b = bin_index(r)?;
                self.sum[b] += u;
                self.count[b] += 1;
            }
        }
        Ok(())
    }

    pub fn merge(&mut self, other: &BinStats) {
        for b in 0..BIN_COUNT {
            self.sum[b] += other.sum[b];
            self.count[b] += other.count[b];
        }
    }

    /// Mean uncertainty of a bin; `None` when the bin is empty.
    pub fn mean(&self, bin: usize) -> Option<f64> {
        (self.count[bin] > 0).then(|| self.sum[bin] / self.count[bin] as f64)
    }

    /// Pixel-weighted mean over a range of bins.
    pub fn range_mean(&self, bins: Range<usize>) -> Option<f64> {
        let n: usize = self.count[bins.clone()].iter().sum();
        (n > 0).then(|| self.sum[bins].iter().sum::<f64>() / n as f64)
    }

    pub fn total(&self) -> usize {
        self.count.iter().sum()
    }

    /// Marginal-zone bins (10 to 90 %) strictly exceed both open water (0 to 10 %)
    /// and pack ice (90 to 100 %). False if any of the three groups is empty.
    pub fn marginal_exceeds_extremes(&self) -> bool {
        match (self.range_mean(1..BIN_COUNT - 1), self.range_mean(0..1), self.range_mean(BIN_COUNT - 1..BIN_COUNT)) {
            (Some(miz), Some(ow), Some(pack)) => miz > ow && miz > pack,
            _ => false,
        }
    }
}

/// Bins a field's uncertainty by a reference SIC grid over the field's coverage.
pub fn bin_uncertainty(field: &UncertaintyField, reference: &[f64]) -> Result<BinStats> {
    let mut s = BinStats::default();
    s.add(&field.uncertainty_pct(), reference, field.coverage.as_deref())?;
    Ok(s)
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Accuracy {
    pub r2: f64,
    pub rmse_pct: f64,
    pub mae_pct: f64,
    pub n_pixels: usize,
}

/// R², RMSE and MAE (in SIC percentage points) over the valid pixels.
pub fn accuracy(pred: &[f64], truth: &[f64], mask: Option<&[bool]>) -> Result<Accuracy> {
    if pred.len() != truth.len() || mask.is_some_and(|m| m.len() != truth.len()) {
        return Err(Error::Dimension { op: "accuracy", lhs: vec![pred.len()], rhs: vec![truth.len()] });
    }
    let pairs: Vec<(f64, f64)> =
        pred.iter().zip(truth).enumerate().filter(|(i, _)| mask.is_none_or(|m| m[*i])).map(|(_, (&p, &t))| (p, t)).collect();
    let n = pairs.len();
    if n < 2 {
        return Err(Error::TooFew { what: "valid pixels", need: 2, got: n });
    }
    let mean_t = pairs.iter().map(|p| p.1).sum::<f64>() / n as f64;
    let ss_tot: f64 = pairs.iter().map(|p| (p.1 - mean_t).powi(2)).sum();
    if ss_tot == 0.0 {
        return Err(Error::Degenerate { op: "accuracy", detail: "truth is constant, R² is undefined".into() });
    }
    let ss_res: f64 = pairs.iter().map(|p| (p.0 - p.1).powi(2)).sum();
    let abs: f64 = pairs.iter().map(|p| (p.0 - p.1).abs()).sum();
    Ok(Accuracy {
        r2: 1.0 - ss_res / ss_tot,
        rmse_pct: 100.0 * (ss_res / n as f64).sqrt(),
        mae_pct: 100.0 * abs / n as f64,
        n_pixels: n,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table1Row {
    pub method: String,
    pub sensor: String,
    pub bin_lo: u32,
    pub bin_hi: u32,
    pub mean_uncertainty_pct: f64,
    pub n_pixels: usize,
}

/// Table rows for the non-empty bins of `stats`.
pub fn table1_rows(method: &str, sensor: &str, stats: &BinStats) -> Vec<Table1Row> {
    (0..BIN_COUNT)
        .filter_map(|b| {
            stats.mean(b).map(|m| Table1Row {
                method: method.into(),
                sensor: sensor.into(),
                bin_lo: 10 * b as u32,
                bin_hi: 10 * (b as u32 + 1),
                mean_uncertainty_pct: m,
                n_pixels: stats.count[b],
            })
        })
        .collect()
}

#[derive(Clone, Debug, PartialEq)]
pub struct Table2Row {
    pub sensor: String,
    pub method: String,
    pub r2: f64,
    pub rmse_pct: f64,
    pub mae_pct: f64,
    pub n_chips: usize,
}

fn write_csv(path: &Path, header: &[&str], rows: impl Iterator<Item = Vec<String>>) -> Result<()> {
    let err = |e: csv::Error| Error::Malformed { path: path.to_path_buf(), detail: e.to_string() };
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header).map_err(err)?;
    for r in rows {
        w.write_record(&r).map_err(err)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Malformed { path: path.to_path_buf(), detail: e.to_string() })?;
    write_atomic(path, &bytes)
}

pub fn write_table1(path: &Path, rows: &[Table1Row]) -> Result<()> {
    write_csv(
        path,
        &TABLE1_HEADER,
        rows.iter().map(|r| {
            vec![
                r.method.clone(),
                r.sensor.clone(),
                r.bin_lo.to_string(),
                r.bin_hi.to_string(),
                format!("{:.6}", r.mean_uncertainty_pct),
                r.n_pixels.to_string(),
            ]
        }),
    )
}

pub fn write_table2(path: &Path, rows: &[Table2Row]) -> Result<()> {
    write_csv(
        path,
        &TABLE2_HEADER,
        rows.iter().map(|r| {
            vec![
                r.sensor.clone(),
                r.method.clone(),
                format!("{:.6}", r.r2),
                format!("{:.6}", r.rmse_pct),
                format!("{:.6}", r.mae_pct),
                r.n_chips.to_string(),
            ]
        }),
    )
}

/// Gray level of a percentage in `[0, 100]`.
pub fn gray_level(pct: f64) -> u32 {
    (pct.clamp(0.0, 100.0) * 255.0 / 100.0).round() as u32
}

/// Plain (P2) graymap of percentages; `None` pixels get [`PGM_NODATA`].
pub fn render_pgm(width: usize, height: usize, pct: &[Option<f64>]) -> Result<String> {
    if pct.len() != width * height {
        return Err(Error::Dimension { op: "render_pgm", lhs: vec![height, width], rhs: vec![pct.len()] });
    }
    let mut s = format!("P2\n{width} {height}\n{PGM_NODATA}\n");
    for row in pct.chunks(width) {
        let line: Vec<String> = row.iter().map(|v| v.map_or(PGM_NODATA, gray_level).to_string()).collect();
        let _ = writeln!(s, "{}", line.join(" "));
    }
    Ok(s)
}

/// Writes `<stem>.pgm` plus the `<stem>.nodata` sidecar; returns the image path.
pub fn write_map(dir: &Path, stem: &str, width: usize, height: usize, pct: &[Option<f64>]) -> Result<PathBuf> {
    let path = dir.join(format!("{stem}.pgm"));
    write_atomic(&path, render_pgm(width, height, pct)?.as_bytes())?;
    write_atomic(&dir.join(format!("{stem}.nodata")), format!("nodata={PGM_NODATA}\n").as_bytes())?;
    Ok(path)
}
