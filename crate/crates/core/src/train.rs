//! Training under the geographically weighted L1 loss plus a scaled KL term.

use std::collections::HashMap;
use std::fmt::Write as _;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::net::{forward, DropoutPlan, Model, ModelKind, Weights};
use crate::real::Real;
use crate::seed;
use crate::tape::{DropoutMode, Tape, Var};
use crate::tensor::Tensor;
use crate::variational::RHO_SUFFIX;

/// Per-pixel confidence class, standing in for ice-chart regions.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum ConfidenceClass {
    OpenWater,
    MarginalIce,
    IcePack,
}

impl ConfidenceClass {
    /// Class of a SIC fraction: open water below 0.1, pack above 0.9.
    pub fn of_sic(sic: f64) -> Self {
        if sic < 0.1 {
            ConfidenceClass::OpenWater
        } else if sic > 0.9 {
            ConfidenceClass::IcePack
        } else {
            ConfidenceClass::MarginalIce
        }
    }

    pub fn code(self) -> u8 {
        match self {
            ConfidenceClass::OpenWater => 0,
            ConfidenceClass::MarginalIce => 1,
            ConfidenceClass::IcePack => 2,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(ConfidenceClass::OpenWater),
            1 => Some(ConfidenceClass::MarginalIce),
            2 => Some(ConfidenceClass::IcePack),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ClassWeights {
    pub open_water: f64,
    pub ice_pack: f64,
    pub marginal: f64,
}

impl Default for ClassWeights {
    fn default() -> Self {
        Self { open_water: 1.0, ice_pack: 1.0, marginal: 0.5 }
    }
}

impl ClassWeights {
    pub fn weight(&self, class: ConfidenceClass) -> f64 {
        match class {
            ConfidenceClass::OpenWater => self.open_water,
            ConfidenceClass::MarginalIce => self.marginal,
            ConfidenceClass::IcePack => self.ice_pack,
        }
    }

    fn validate(&self) -> Result<()> {
        for w in [self.open_water, self.ice_pack, self.marginal] {
            if !(w.is_finite() && w > 0.0) {
                return Err(Error::Config(format!("class weight {w} must be positive")));
            }
        }
        Ok(())
    }
}

/// Per-pixel loss weights, all positive and finite.
#[derive(Clone, Debug, PartialEq)]
pub struct GeoWeightMask<T> {
    weights: Tensor<T>,
}

impl<T: Real> GeoWeightMask<T> {
    pub fn new(weights: Tensor<T>) -> Result<Self> {
        if weights.data().iter().any(|&w| w <= T::zero()) {
            return Err(Error::Config("geographic weights must be positive".into()));
        }
        Ok(Self { weights })
    }

    pub fn from_classes(shape: &[usize], classes: &[ConfidenceClass], cw: &ClassWeights) -> Result<Self> {
        cw.validate()?;
        let data = classes.iter().map(|&c| T::of(cw.weight(c))).collect();
        Self::new(Tensor::new(shape, data)?)
    }

    pub fn uniform(shape: &[usize]) -> Self {
        Self { weights: Tensor::full(shape, T::one()) }
    }

    pub fn tensor(&self) -> &Tensor<T> {
        &self.weights
    }
}

/// `mean(GW * |pred - label|)` over all pixels and samples.
pub fn l1_gw_loss<T: Real>(tape: &mut Tape<T>, pred: Var, label: Var, gw: &GeoWeightMask<T>) -> Result<Var> {
    let (ps, ls) = (tape.shape(pred).to_vec(), tape.shape(label).to_vec());
    if ps != ls || ps != gw.weights.shape() {
        return Err(Error::Dimension { op: "l1_gw_loss", lhs: ps, rhs: ls });
    }
    let diff = tape.sub(pred, label)?;
    let abs = tape.abs(diff)?;
    let weighted = tape.mul_const(abs, gw.weights.data().to_vec())?;
    tape.mean(weighted)
}

/// Plain-value version of [`l1_gw_loss`], accumulated in f64.
pub fn l1_gw_value<T: Real>(pred: &[T], label: &[T], gw: &[T]) -> f64 {
    let n = pred.len() as f64;
    pred.iter().zip(label).zip(gw).map(|((&p, &l), &w)| w.f64() * (p.f64() - l.f64()).abs()).sum::<f64>() / n
}

/// `l1 + kl_scale * kl`.
pub fn total_loss<T: Real>(tape: &mut Tape<T>, l1: Var, kl: Option<Var>, kl_scale: f64) -> Result<Var> {
    match kl {
        Some(kl) if kl_scale != 0.0 => {
            let scaled = tape.scale(kl, kl_scale)?;
            tape.add(l1, scaled)
        }
        _ => Ok(l1),
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OptimizerKind {
    Adam,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub optimizer: OptimizerKind,
    pub seed: u64,
    /// Weight of the KL term; `None` means `1 / N_train`.
    pub kl_scale: Option<f64>,
    pub dropout_p: f64,
    pub class_weights: ClassWeights,
    /// Keep a snapshot every `snapshot_stride` epochs.
    pub snapshot_stride: usize,
    /// Leave posterior spreads untouched by the optimizer.
    pub freeze_rho: bool,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 30,
            batch_size: 8,
            learning_rate: 1e-3,
            optimizer: OptimizerKind::Adam,
            seed: 0,
            kl_scale: None,
            dropout_p: 0.1,
            class_weights: ClassWeights::default(),
            snapshot_stride: 5,
            freeze_rho: false,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.epochs == 0 || self.batch_size == 0 || self.snapshot_stride == 0 {
            return bad("epochs, batch size and snapshot stride must be positive");
        }
        if !(self.learning_rate.is_finite() && self.learning_rate > 0.0) {
            return bad("learning rate must be positive");
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return bad("dropout probability must lie in [0, 1)");
        }
        if let Some(s) = self.kl_scale {
            if !(s.is_finite() && s >= 0.0) {
                return bad("kl scale must be non-negative");
            }
        }
        self.class_weights.validate()
    }

    pub fn resolved_kl_scale(&self, n_train: usize) -> f64 {
        self.kl_scale.unwrap_or(1.0 / n_train as f64)
    }
}

/// One training or validation chip.
#[derive(Clone, Debug)]
pub struct TrainSample<T> {
    /// `(C, H0, W0)` standardized channels.
    pub chip: Tensor<T>,
    /// `H0 * W0` label SIC fractions.
    pub label: Vec<T>,
    pub classes: Vec<ConfidenceClass>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_l1: f64,
    pub train_kl: f64,
    pub val_l1: f64,
}

/// Renders the loss curve as `epoch,train_l1,train_kl,val_l1` CSV.
pub fn loss_curve_csv(curve: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,train_l1,train_kl,val_l1\n");
    for e in curve {
        let _ = writeln!(s, "{},{},{},{}", e.epoch, e.train_l1, e.train_kl, e.val_l1);
    }
    s
}

#[derive(Clone, Debug)]
pub struct EpochSnapshot<T> {
    pub epoch: usize,
    pub model: Model<T>,
    pub val_l1: f64,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub best: Model<T>,
    pub best_epoch: usize,
    pub snapshots: Vec<EpochSnapshot<T>>,
    pub curve: Vec<EpochLoss>,
}

/// Adaptive-moment optimizer with the usual defaults.
#[derive(Debug)]
pub struct Adam<T> {
    lr: f64,
    beta1: f64,
    beta2: f64,
    eps: f64,
    step: i32,
    moments: HashMap<String, (Vec<T>, Vec<T>)>,
}

impl<T: Real> Adam<T> {
    pub fn new(lr: f64) -> Self {
        Self { lr, beta1: 0.9, beta2: 0.999, eps: 1e-8, step: 0, moments: HashMap::new() }
    }

    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    pub fn update(&mut self, name: &str, param: &mut Tensor<T>, grad: &[T]) -> Result<()> {
        let (m, v) = self
            .moments
            .entry(name.to_string())
            .or_insert_with(|| (vec![T::zero(); grad.len()], vec![T::zero(); grad.len()]));
        let (b1, b2) = (T::of(self.beta1), T::of(self.beta2));
        let c1 = T::of(1.0 - self.beta1.powi(self.step));
        let c2 = T::of(1.0 - self.beta2.powi(self.step));
        let (lr, eps) = (T::of(self.lr), T::of(self.eps));
        param.update(|p| {
            for i in 0..p.len() {
                let g = grad[i];
                m[i] = b1 * m[i] + (T::one() - b1) * g;
                v[i] = b2 * v[i] + (T::one() - b2) * g * g;
                let mh = m[i] / c1;
                let vh = v[i] / c2;
                p[i] -= lr * mh / (vh.sqrt() + eps);
            }
        })
    }
}

/// Stacks samples into `(B, C, H0, W0)` chips, `(B, 1, H0, W0)` labels and weights.
fn collate<T: Real>(samples: &[&TrainSample<T>], cw: &ClassWeights) -> Result<(Tensor<T>, Tensor<T>, GeoWeightMask<T>)> {
    let first = samples[0];
    let cs = first.chip.shape();
    let (h, w) = (cs[1], cs[2]);
    let b = samples.len();
    let mut chips = Vec::with_capacity(b * first.chip.len());
    let mut labels = Vec::with_capacity(b * h * w);
    let mut classes = Vec::with_capacity(b * h * w);
    for s in samples {
        if s.chip.shape() != cs || s.label.len() != h * w || s.classes.len() != h * w {
            return Err(Error::Dimension { op: "collate", lhs: cs.to_vec(), rhs: s.chip.shape().to_vec() });
        }
        chips.extend_from_slice(s.chip.data());
        labels.extend_from_slice(&s.label);
        classes.extend_from_slice(&s.classes);
    }
    let lshape = [b, 1, h, w];
    Ok((Tensor::new(&[b, cs[0], h, w], chips)?, Tensor::new(&lshape, labels)?, GeoWeightMask::from_classes(&lshape, &classes, cw)?))
}

/// Mean weighted L1 over a split with the posterior-mean (or deterministic) weights.
pub fn validation_l1<T: Real>(model: &Model<T>, samples: &[TrainSample<T>], cfg: &TrainConfig) -> Result<f64> {
    let mut total = 0.0;
    for batch in samples.chunks(cfg.batch_size) {
        let refs: Vec<&TrainSample<T>> = batch.iter().collect();
        let (chips, labels, gw) = collate(&refs, &cfg.class_weights)?;
        let pred = model.predict(&chips, Weights::Mean, &DropoutPlan::off())?;
        total += l1_gw_value(pred.data(), labels.data(), gw.tensor().data()) * batch.len() as f64;
    }
    Ok(total / samples.len() as f64)
}

pub fn train<T: Real>(
    model: Model<T>,
    train_set: &[TrainSample<T>],
    val_set: &[TrainSample<T>],
    cfg: &TrainConfig,
) -> Result<TrainOutcome<T>> {
    train_with(model, train_set, val_set, cfg, |_| Ok(()))
}

/// Runs the training loop, handing each snapshot to `on_snapshot` as it is taken.
pub fn train_with<T: Real>(
    mut model: Model<T>,
    train_set: &[TrainSample<T>],
    val_set: &[TrainSample<T>],
    cfg: &TrainConfig,
    mut on_snapshot: impl FnMut(&EpochSnapshot<T>) -> Result<()>,
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if train_set.is_empty() {
        return Err(Error::TooFew { what: "training chips", need: 1, got: 0 });
    }
    if val_set.is_empty() {
        return Err(Error::TooFew { what: "validation chips", need: 1, got: 0 });
    }
    if model.kind == ModelKind::Dropout {
        model.dropout_p = cfg.dropout_p;
    }
    let kl_scale = cfg.resolved_kl_scale(train_set.len());
    let mut adam = Adam::<T>::new(cfg.learning_rate);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut snapshots = Vec::new();
    let mut best: Option<(f64, usize, Model<T>)> = None;
    let mut order: Vec<usize> = (0..train_set.len()).collect();

    for epoch in 1..=cfg.epochs {
        order.sort_unstable();
        order.shuffle(&mut seed::rng(cfg.seed, "shuffle", epoch as u64));
        let (mut l1_sum, mut kl_sum, mut batches) = (0.0, 0.0, 0usize);
        for (bi, idx) in order.chunks(cfg.batch_size).enumerate() {
            let step_key = ((epoch as u64) << 32) | bi as u64;
            let samples: Vec<&TrainSample<T>> = idx.iter().map(|&i| &train_set[i]).collect();
            let (l1, kl) = train_step(&mut model, &mut adam, &samples, cfg, kl_scale, step_key).map_err(|e| {
                if e.is_numeric() {
                    Error::NumericAbort { epoch, batch: bi }
                } else {
                    e
                }
            })?;
            l1_sum += l1;
            kl_sum += kl;
            batches += 1;
        }
        let val_l1 = validation_l1(&model, val_set, cfg)?;
        if !val_l1.is_finite() {
            return Err(Error::NumericAbort { epoch, batch: batches });
        }
        curve.push(EpochLoss { epoch, train_l1: l1_sum / batches as f64, train_kl: kl_sum / batches as f64, val_l1 });
        if best.as_ref().is_none_or(|(b, _, _)| val_l1 < *b) {
            best = Some((val_l1, epoch, model.clone()));
        }
        if epoch % cfg.snapshot_stride == 0 {
            let snap = EpochSnapshot { epoch, model: model.clone(), val_l1 };
            on_snapshot(&snap)?;
            snapshots.push(snap);
        }
    }
    let (_, best_epoch, best) = best.expect("at least one epoch");
    Ok(TrainOutcome { best, best_epoch, snapshots, curve })
}

/// One optimizer step; returns the batch's weighted L1 and unscaled KL.
fn train_step<T: Real>(
    model: &mut Model<T>,
    adam: &mut Adam<T>,
    samples: &[&TrainSample<T>],
    cfg: &TrainConfig,
    kl_scale: f64,
    step_key: u64,
) -> Result<(f64, f64)> {
    let (chips, labels, gw) = collate(samples, &cfg.class_weights)?;
    let mut tape = Tape::new();
    let weights = match model.kind {
        ModelKind::Bayesian => Weights::Sample(seed::derive(cfg.seed, "weights", step_key)),
        _ => Weights::Mean,
    };
    let bound = model.bind(&mut tape, weights, true)?;
    let dropout = match model.kind {
        ModelKind::Dropout => DropoutPlan {
            p: model.dropout_p,
            mode: DropoutMode::Train,
            seed: seed::derive(cfg.seed, "dropout-train", step_key),
        },
        _ => DropoutPlan::off(),
    };
    let x = tape.constant(chips);
    let y = tape.constant(labels);
    let out = forward(&mut tape, x, &model.config, &bound.params, &dropout)?;
    let l1 = l1_gw_loss(&mut tape, out.sic, y, &gw)?;
    let loss = total_loss(&mut tape, l1, bound.kl, kl_scale)?;
    let l1_value = tape.value(l1).data()[0].f64();
    let kl_value = bound.kl.map(|k| tape.value(k).data()[0].f64()).unwrap_or(0.0);
    let mut grads = tape.backward(loss)?;
    drop(tape);
    adam.begin_step();
    for (name, var) in &bound.leaves {
        if cfg.freeze_rho && name.ends_with(RHO_SUFFIX) {
            continue;
        }
        let g = grads.take(*var)?;
        adam.update(name, model.params.get_mut(name)?, &g)?;
    }
    Ok((l1_value, kl_value))
}
