use std::path::PathBuf;

use floeformer::synth::{build_dataset, write_dataset, SplitFractions};

use crate::args::GenDataArgs;
use crate::error::Result;

pub fn run(a: &GenDataArgs) -> Result<PathBuf> {
    let fractions = SplitFractions { train: a.train_frac, val: a.val_frac, test: a.test_frac };
    let records = build_dataset(a.scenes, a.seed, a.side, fractions)?;
    write_dataset(&records, &a.out)?;
    eprintln!("wrote {} chips ({} scenes, side {}) to {}", records.len(), a.scenes, a.side, a.out.display());
    Ok(a.out.clone())
}
