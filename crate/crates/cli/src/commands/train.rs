use std::path::PathBuf;

use floeformer::container::write_atomic;
use floeformer::net::{Model, NetConfig};
use floeformer::synth::{load_records, ChipRecord, Split};
use floeformer::train::{loss_curve_csv, train_with, ClassWeights, OptimizerKind, TrainConfig, TrainSample};
use floeformer::variational::bayesianize_with;
use floeformer::Real;

use super::{ensure_dir, sensor_filter};
use crate::args::{Mode, Precision, TrainArgs};
use crate::error::{CliError, Result};

pub const BEST_NAME: &str = "best.bin";
pub const LOSS_CURVE_NAME: &str = "loss_curve.csv";

pub fn snapshot_name(epoch: usize) -> String {
    format!("snap_{epoch}.bin")
}

pub fn run(a: &TrainArgs, precision: Precision) -> Result<PathBuf> {
    match precision {
        Precision::F32 => run_with::<f32>(a),
        Precision::F64 => run_with::<f64>(a),
    }
}

fn samples<T: Real>(records: &[ChipRecord]) -> Result<Vec<TrainSample<T>>> {
    Ok(records.iter().map(|r| r.to_train_sample()).collect::<floeformer::Result<_>>()?)
}

fn net_config(a: &TrainArgs, side: usize, channels: usize) -> Result<NetConfig> {
    let tiles = a.token_grid * a.token_side;
    if tiles == 0 || !side.is_multiple_of(tiles) {
        return Err(CliError::Usage(format!(
            "chip side {side} is not divisible by --token-grid x --token-side = {tiles}"
        )));
    }
    Ok(NetConfig {
        in_channels: channels,
        chip_side: side,
        token_grid: a.token_grid,
        token_side: a.token_side,
        patch_side: side / tiles,
        hidden: a.hidden,
        heads: a.heads,
        repeats: a.repeats,
        residual: !a.no_residual,
        norm: !a.no_norm,
    })
}

fn run_with<T: Real>(a: &TrainArgs) -> Result<PathBuf> {
    let sensor = sensor_filter(a.sensor);
    let train_recs = load_records(&a.data, Some(Split::Train), sensor)?;
    let val_recs = load_records(&a.data, Some(Split::Val), sensor)?;
    let Some(first) = train_recs.first() else {
        return Err(CliError::data(&a.data, "no training chips for the selected sensor"));
    };
    if val_recs.is_empty() {
        return Err(CliError::data(&a.data, "no validation chips for the selected sensor"));
    }
    let config = net_config(a, first.side, first.channels.len())?;
    config.validate()?;
    let model = match a.mode {
        Mode::Deterministic => Model::<T>::deterministic(config, a.seed)?,
        Mode::Dropout => Model::with_dropout(config, a.seed, a.dropout_p)?,
        Mode::Bayesian => {
            if !(a.sigma_init.is_finite() && a.sigma_init > 0.0) {
                return Err(CliError::Usage("--sigma-init must be positive".into()));
            }
            bayesianize_with(&Model::deterministic(config, a.seed)?, a.sigma_init)?
        }
    };
    let cfg = TrainConfig {
        epochs: a.epochs,
        batch_size: a.batch_size,
        learning_rate: a.lr,
        optimizer: OptimizerKind::Adam,
        seed: a.seed,
        kl_scale: a.kl_scale,
        dropout_p: a.dropout_p,
        class_weights: ClassWeights { open_water: a.ow_weight, ice_pack: a.pack_weight, marginal: a.miz_weight },
        snapshot_stride: a.snapshot_stride,
        freeze_rho: false,
    };
    cfg.validate()?;
    let (tr, va) = (samples::<T>(&train_recs)?, samples::<T>(&val_recs)?);
    let out = ensure_dir(&a.out)?;
    eprintln!("training {:?} model on {} chips ({} validation) for {} epochs", a.mode, tr.len(), va.len(), a.epochs);
    let outcome = train_with(model, &tr, &va, &cfg, |snap| snap.model.save(&out.join(snapshot_name(snap.epoch))))?;
    outcome.best.save(&out.join(BEST_NAME))?;
    write_atomic(&out.join(LOSS_CURVE_NAME), loss_curve_csv(&outcome.curve).as_bytes())?;
    let best = &outcome.curve[outcome.best_epoch - 1];
    eprintln!("best epoch {} (validation L1 {:.5}), {} snapshots", outcome.best_epoch, best.val_l1, outcome.snapshots.len());
    Ok(out)
}
