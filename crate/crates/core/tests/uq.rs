mod common;

use common::{bbb_mean_spread, random_tensor, rng, tiny_config, toy_samples};
use floeformer::net::{DropoutPlan, Model, Weights};
use floeformer::synth::Sensor;
use floeformer::train::{train, TrainConfig};
use floeformer::uq::{
    bbb_predict, ensemble_predict, mc_dropout_predict, mc_dropout_predict_with_seeds, predictive_moments, UncertaintyField,
    UqMethod,
};
use floeformer::variational::{bayesianize_with, RHO_SUFFIX};
use floeformer::{Error, Tensor};
use proptest::prelude::*;

fn maps(values: &[&[f64]], h: usize, w: usize) -> Vec<Tensor<f64>> {
    values.iter().map(|v| Tensor::from_f64(&[h, w], v).unwrap()).collect()
}

fn chips(n: usize, seed: u64) -> Tensor<f64> {
    random_tensor(&mut rng(seed), &[n, 2, 8, 8], 1.5)
}

fn check_invariants(fields: &[UncertaintyField]) {
    for f in fields {
        assert_eq!(f.mean.len(), f.height * f.width);
        assert!(f.mean.iter().all(|m| (0.0..=1.0).contains(m)));
        assert!(f.variance.iter().all(|&v| v >= 0.0));
        for (u, v) in f.uncertainty_pct().iter().zip(&f.variance) {
            assert_eq!(*u, 100.0 * (*v as f64).sqrt());
        }
    }
}

fn with_sigma(sigma: f64, seed: u64) -> Model<f64> {
    bayesianize_with(&Model::<f64>::deterministic(tiny_config(), seed).unwrap(), sigma).unwrap()
}

#[test]
fn moments_examples() {
    let m = predictive_moments(&maps(&[&[0.3], &[0.3], &[0.3]], 1, 1)).unwrap();
    assert_eq!((m.mean[0], m.variance[0], m.count), (0.3, 0.0, 3));
    let m = predictive_moments(&maps(&[&[0.2, 0.0], &[0.4, 1.0]], 1, 2)).unwrap();
    assert!((m.mean[0] - 0.3).abs() < 1e-15 && (m.variance[0] - 0.01).abs() < 1e-15);
    assert!((m.mean[1] - 0.5).abs() < 1e-15 && (m.variance[1] - 0.25).abs() < 1e-15);
    assert_eq!((m.height, m.width), (1, 2));
    assert!(matches!(predictive_moments(&maps(&[&[0.3]], 1, 1)), Err(Error::TooFew { .. })));
    let mixed = vec![Tensor::<f64>::zeros(&[2, 2]), Tensor::zeros(&[1, 4])];
    assert!(matches!(predictive_moments(&mixed), Err(Error::Dimension { .. })));
}

fn welford(xs: &[f64]) -> (f64, f64) {
    let (mut mean, mut m2) = (0.0, 0.0);
    for (k, &x) in xs.iter().enumerate() {
        let d = x - mean;
        mean += d / (k + 1) as f64;
        m2 += d * (x - mean);
    }
    (mean, m2 / xs.len() as f64)
}

proptest! {
    #[test]
    fn moments_match_streaming_oracle(s in 2usize..40, seed in 0u64..1000) {
        let samples: Vec<Tensor<f64>> = (0..s).map(|i| random_tensor::<f64>(&mut rng(seed * 100 + i as u64), &[3, 5], 1.0)).collect();
        let m = predictive_moments(&samples).unwrap();
        for p in 0..15 {
            let col: Vec<f64> = samples.iter().map(|t| t.data()[p]).collect();
            let (mean, var) = welford(&col);
            prop_assert!((m.mean[p] - mean).abs() < 1e-7);
            prop_assert!((m.variance[p] - var).abs() < 1e-7);
            prop_assert!(m.variance[p] >= 0.0);
        }
        let mut rev = samples.clone();
        rev.reverse();
        prop_assert_eq!(predictive_moments(&rev).unwrap(), m);
    }
}

#[test]
fn bbb_with_degenerate_posterior_has_no_uncertainty() {
    let mut model = with_sigma(0.05, 3);
    for (name, t) in model.params.iter_mut() {
        if name.ends_with(RHO_SUFFIX) {
            t.update(|d| d.fill(-20.0)).unwrap();
        }
    }
    let fields = bbb_predict(&model, &chips(2, 1), 8, 4).unwrap();
    check_invariants(&fields);
    for f in &fields {
        assert!(f.uncertainty_pct().iter().all(|&u| u < 1e-3));
    }
}

#[test]
fn bbb_is_deterministic_and_method_checked() {
    let model = with_sigma(0.1, 3);
    let x = chips(3, 2);
    let a = bbb_predict(&model, &x, 6, 17).unwrap();
    assert_eq!(a.len(), 3);
    assert_eq!(a, bbb_predict(&model, &x, 6, 17).unwrap());
    assert_ne!(a, bbb_predict(&model, &x, 6, 18).unwrap());
    check_invariants(&a);
    assert!(a.iter().all(|f| f.method == UqMethod::Bbb && f.samples == 6 && f.seed == 17));
    assert!(a.iter().any(|f| f.variance.iter().any(|&v| v > 0.0)));

    let det = Model::<f64>::deterministic(tiny_config(), 3).unwrap();
    assert!(matches!(bbb_predict(&det, &x, 6, 17), Err(Error::MethodMismatch(_))));
    assert!(matches!(bbb_predict(&model, &x, 1, 17), Err(Error::TooFew { .. })));
}

#[test]
fn bbb_mean_spread_shrinks_with_samples() {
    let model = with_sigma(0.3, 5);
    let x = chips(2, 9);
    let (s16, s64) = (bbb_mean_spread(&model, &x, 16, 30), bbb_mean_spread(&model, &x, 64, 30));
    assert!(s16 > 0.0);
    let ratio = s64 / s16;
    assert!(ratio <= 0.5 * 1.3, "spread ratio {ratio}");
}

#[test]
fn mc_dropout_contracts() {
    let model = Model::<f64>::with_dropout(tiny_config(), 2, 0.1).unwrap();
    let x = chips(2, 3);
    assert!(matches!(mc_dropout_predict(&model, &x, 4, 0.0, 1), Err(Error::Degenerate { .. })));
    assert!(matches!(mc_dropout_predict(&model, &x, 4, 1.0, 1), Err(Error::Config(_))));
    let same = mc_dropout_predict_with_seeds(&model, &x, 0.3, &[5, 5], 5).unwrap();
    assert!(same.iter().all(|f| f.variance.iter().all(|&v| v == 0.0)));
    let a = mc_dropout_predict(&model, &x, 8, 0.1, 3).unwrap();
    assert_eq!(a, mc_dropout_predict(&model, &x, 8, 0.1, 3).unwrap());
    check_invariants(&a);
}

#[test]
fn mc_dropout_on_trained_model_is_uncertain() {
    let (tr, va) = (toy_samples::<f64>(16, 8, 1), toy_samples::<f64>(4, 8, 2));
    let cfg = TrainConfig { epochs: 3, dropout_p: 0.1, ..Default::default() };
    let out = train(Model::<f64>::with_dropout(tiny_config(), 4, 0.1).unwrap(), &tr, &va, &cfg).unwrap();
    let x = Tensor::new(&[4, 2, 8, 8], va.iter().flat_map(|s| s.chip.data().to_vec()).collect()).unwrap();
    let fields = mc_dropout_predict(&out.best, &x, 16, 0.1, 7).unwrap();
    check_invariants(&fields);
    let mean_u: f64 = fields.iter().flat_map(|f| f.uncertainty_pct()).sum::<f64>() / (4 * 64) as f64;
    assert!(mean_u > 0.0, "{mean_u}");
}

#[test]
fn ensemble_contracts() {
    let base = Model::<f64>::deterministic(tiny_config(), 6).unwrap();
    let x = chips(2, 4);
    let same = ensemble_predict(&[base.clone(), base.clone(), base.clone()], &x).unwrap();
    assert!(same.iter().all(|f| f.variance.iter().all(|&v| v == 0.0)));
    assert!(matches!(ensemble_predict(std::slice::from_ref(&base), &x), Err(Error::TooFew { .. })));

    // two maps offset by exactly b
    let b = 0.02;
    let lo: Vec<f64> = (0..6).map(|i| 0.1 + 0.1 * i as f64).collect();
    let hi: Vec<f64> = lo.iter().map(|v| v + b).collect();
    let m = predictive_moments(&maps(&[&lo, &hi], 2, 3)).unwrap();
    assert!(m.variance.iter().all(|v| (v.sqrt() - b / 2.0).abs() < 1e-12));

    // the head ends in a sigmoid, so a bias shift moves each pixel by its own offset
    let mut shifted = base.clone();
    shifted.params.get_mut("head.bias").unwrap().update(|d| d[0] += 0.3).unwrap();
    let p0 = base.predict(&x, Weights::Mean, &DropoutPlan::off()).unwrap();
    let p1 = shifted.predict(&x, Weights::Mean, &DropoutPlan::off()).unwrap();
    let fields = ensemble_predict(&[base.clone(), shifted.clone()], &x).unwrap();
    for (c, f) in fields.iter().enumerate() {
        for i in 0..64 {
            let gap = (p1.data()[c * 64 + i] - p0.data()[c * 64 + i]).abs();
            assert!(gap > 0.0);
            assert!(((f.variance[i] as f64).sqrt() - gap / 2.0).abs() < 1e-6);
        }
    }
    let third = Model::<f64>::deterministic(tiny_config(), 7).unwrap();
    let fwd = ensemble_predict(&[base.clone(), shifted.clone(), third.clone()], &x).unwrap();
    let rev = ensemble_predict(&[third, base, shifted], &x).unwrap();
    assert_eq!(fwd, rev);
    check_invariants(&fwd);
}

#[test]
fn ensemble_of_bayesian_snapshots_uses_means() {
    let a = with_sigma(0.5, 1);
    let b = with_sigma(0.5, 2);
    let x = chips(1, 5);
    let from_bayes = ensemble_predict(&[a.clone(), b.clone()], &x).unwrap();
    let from_means = ensemble_predict(&[a.mean_model().unwrap(), b.mean_model().unwrap()], &x).unwrap();
    assert_eq!(from_bayes, from_means);
}

#[test]
fn field_file_round_trip_keeps_tags() {
    let dir = tempfile::tempdir().unwrap();
    let model = with_sigma(0.1, 3);
    let mut fields = bbb_predict(&model, &chips(1, 2), 4, 3).unwrap();
    fields.extend(mc_dropout_predict(&Model::with_dropout(tiny_config(), 1, 0.2).unwrap(), &chips(1, 2), 4, 0.2, 9).unwrap());
    fields.extend(ensemble_predict(&[model.clone(), with_sigma(0.1, 4)], &chips(1, 2)).unwrap());
    for (i, f) in fields.iter_mut().enumerate() {
        f.sensor = Some(Sensor::ALL[i]);
        f.scene = Some(40 + i);
        if i == 1 {
            f.coverage = Some((0..64).map(|p| p % 3 != 0).collect());
        }
        let path = dir.path().join(f.file_name());
        f.save(&path).unwrap();
        let back = UncertaintyField::load(&path).unwrap();
        assert_eq!(&back, f);
        assert_eq!(std::fs::read(&path).unwrap(), f.to_container().encode());
    }
    assert_eq!(fields[0].file_name(), "scene_0040_sentinel1_bbb.field");
    assert_eq!(fields[1].file_name(), "scene_0041_rcm_mc-dropout.field");
    assert_eq!(fields[2].file_name(), "scene_0042_amsr2_epoch-ensemble.field");
    for m in UqMethod::ALL {
        assert_eq!(m.as_str().parse::<UqMethod>().unwrap(), m);
    }
}
