use std::path::{Path, PathBuf};

use floeformer::eval::write_map;
use floeformer::fusion::Mosaic;
use floeformer::uq::UncertaintyField;

use super::{ensure_dir, files_with_ext};
use crate::args::ReportArgs;
use crate::error::{CliError, Result};
use crate::manifest;

fn stem(path: &Path) -> String {
    path.file_stem().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

fn maps(out: &Path, stem: &str, width: usize, height: usize, mean: Vec<Option<f64>>, unc: Vec<Option<f64>>) -> Result<()> {
    write_map(out, &format!("{stem}_mean"), width, height, &mean)?;
    write_map(out, &format!("{stem}_uncertainty"), width, height, &unc)?;
    Ok(())
}

/// Renders mean and uncertainty maps for every prediction the evaluation covered.
pub fn run(a: &ReportArgs) -> Result<PathBuf> {
    let m = manifest::read(&a.eval)?;
    let pred = manifest::get(&m, "pred")
        .map(PathBuf::from)
        .ok_or_else(|| CliError::data(&a.eval, "run manifest has no `pred` entry; point --eval at an evaluate output"))?;
    let out = ensure_dir(&a.out)?;
    let mut n = 0;
    for path in files_with_ext(&pred, "field")? {
        let f = UncertaintyField::load(&path)?;
        let unc = f.uncertainty_pct();
        let mean = (0..f.mean.len()).map(|i| f.is_valid(i).then(|| 100.0 * f.mean[i] as f64)).collect();
        let unc = (0..unc.len()).map(|i| f.is_valid(i).then_some(unc[i])).collect();
        maps(&out, &stem(&path), f.width, f.height, mean, unc)?;
        n += 1;
    }
    for path in files_with_ext(&pred, "mosaic")? {
        let m = Mosaic::load(&path)?;
        let mean = (0..m.mean.len()).map(|i| m.is_valid(i).then(|| 100.0 * m.mean[i] as f64)).collect();
        let unc = (0..m.mean.len()).map(|i| m.is_valid(i).then(|| m.uncertainty[i] as f64)).collect();
        maps(&out, &stem(&path), m.width, m.height, mean, unc)?;
        n += 1;
    }
    eprintln!("rendered {n} predictions to {}", out.display());
    Ok(out)
}
