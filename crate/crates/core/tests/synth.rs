mod common;

use std::collections::BTreeSet;

use floeformer::synth::{
    build_dataset, build_dataset_with, decode_chip, encode_chip, gen_truth, gen_truth_with, load_records, read_chip,
    read_manifest, render, render_pm, render_sar, weak_label, weak_label_with, write_chip, write_dataset, Sensor, Split,
    SplitFractions, SynthConfig, MANIFEST_FILE,
};
use floeformer::train::ConfidenceClass;
use floeformer::Error;
use proptest::prelude::*;
use sha2::{Digest, Sha256};
use std::path::Path;

fn quiet() -> SynthConfig {
    SynthConfig { sar_looks: None, wind_streak: 0.0, pm_clouds: 0, pm_noise_k: 0.0, ..SynthConfig::default() }
}

fn dir_hash(dir: &Path) -> String {
    let mut names: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
    names.sort();
    let mut h = Sha256::new();
    for p in names {
        h.update(p.file_name().unwrap().to_string_lossy().as_bytes());
        h.update(std::fs::read(&p).unwrap());
    }
    format!("{:x}", h.finalize())
}

/// Power of the discrete Fourier component `k` of a series with its mean removed.
fn dft_power(series: &[f64], k: usize) -> f64 {
    let n = series.len() as f64;
    let mean = series.iter().sum::<f64>() / n;
    let (mut re, mut im) = (0.0, 0.0);
    for (t, v) in series.iter().enumerate() {
        let a = 2.0 * std::f64::consts::PI * k as f64 * t as f64 / n;
        re += (v - mean) * a.cos();
        im += (v - mean) * a.sin();
    }
    (re * re + im * im) / (n * n)
}

fn row_means(grid: &[f64], side: usize) -> Vec<f64> {
    grid.chunks(side).map(|r| r.iter().sum::<f64>() / side as f64).collect()
}

fn roughness(grid: &[f64], side: usize) -> f64 {
    let mut e = 0.0;
    for y in 0..side {
        for x in 0..side {
            let v = grid[y * side + x];
            if x + 1 < side {
                e += (grid[y * side + x + 1] - v).powi(2);
            }
            if y + 1 < side {
                e += (grid[(y + 1) * side + x] - v).powi(2);
            }
        }
    }
    e
}

#[test]
fn truth_is_seeded_bounded_and_class_consistent() {
    let a = gen_truth(11, 64).unwrap();
    assert_eq!(a, gen_truth(11, 64).unwrap());
    assert_ne!(a.sic, gen_truth(12, 64).unwrap().sic);
    assert!(matches!(gen_truth(1, 15), Err(Error::Config(_))));
    for seed in 0..20 {
        let t = gen_truth(seed, 32).unwrap();
        assert_eq!(t.sic.len(), 32 * 32);
        for (s, c) in t.sic.iter().zip(&t.classes) {
            assert!((0.0..=1.0).contains(s));
            assert_eq!(*c, ConfidenceClass::of_sic(*s));
        }
    }
}

#[test]
fn every_class_is_well_represented() {
    let mut frac = [0.0; 3];
    for seed in 0..100 {
        let t = gen_truth(seed, 64).unwrap();
        for c in &t.classes {
            frac[c.code() as usize] += 1.0 / (64.0 * 64.0 * 100.0);
        }
    }
    assert!(frac.iter().all(|&f| f >= 0.05), "{frac:?}");
}

#[test]
fn noise_free_sar_is_monotone_in_sic() {
    let t = gen_truth(3, 64).unwrap();
    let chip = render_sar(&quiet(), &t, Sensor::Sentinel1, 9).unwrap();
    let mut idx: Vec<usize> = (0..t.sic.len()).collect();
    idx.sort_by(|&a, &b| t.sic[a].total_cmp(&t.sic[b]));
    for c in 0..2 {
        for w in idx.windows(2) {
            let (s0, s1) = (t.sic[w[0]], t.sic[w[1]]);
            let (v0, v1) = (chip.channels[c][w[0]], chip.channels[c][w[1]]);
            if s1 > s0 {
                assert!(v1 > v0);
            } else {
                assert_eq!(v0, v1);
            }
        }
    }
    assert!(render_sar(&quiet(), &t, Sensor::Amsr2, 9).is_err());
}

#[test]
fn rcm_rows_carry_banding_absent_from_sentinel1() {
    let cfg = SynthConfig::default();
    let k = 64 / cfg.rcm_band_period;
    let (mut rcm, mut s1) = (0.0, 0.0);
    for seed in 0..8 {
        let t = gen_truth(seed, 64).unwrap();
        let r = render_sar(&cfg, &t, Sensor::Rcm, seed + 100).unwrap();
        let s = render_sar(&cfg, &t, Sensor::Sentinel1, seed + 100).unwrap();
        rcm += dft_power(&row_means(&r.channels[0], 64), k);
        s1 += dft_power(&row_means(&s.channels[0], 64), k);
    }
    assert!(rcm > 20.0 * s1, "rcm {rcm:e} sentinel1 {s1:e}");
}

#[test]
fn sensor_rendering_is_seeded() {
    let t = gen_truth(5, 32).unwrap();
    let cfg = SynthConfig::default();
    for s in Sensor::ALL {
        let a = render(&cfg, &t, s, 4).unwrap();
        assert_eq!(a, render(&cfg, &t, s, 4).unwrap());
        assert_ne!(a.channels, render(&cfg, &t, s, 5).unwrap().channels);
        assert_eq!(a.channels.len(), s.channels());
        assert!(a.channels.iter().flatten().all(|v| v.is_finite()));
    }
    assert!(render(&cfg, &t, Sensor::Amsr2, 4).unwrap().coverage.iter().all(|&c| c));
}

#[test]
fn clear_sky_unblurred_pm_is_affine_in_sic() {
    let cfg = SynthConfig { pm_blur: 0.0, ..quiet() };
    let t = gen_truth(8, 32).unwrap();
    let chip = render_pm(&cfg, &t, 1);
    for c in 0..2 {
        let v = &chip.channels[c];
        let (i0, i1) = (0..t.sic.len()).fold((0, 0), |(lo, hi), i| {
            (if t.sic[i] < t.sic[lo] { i } else { lo }, if t.sic[i] > t.sic[hi] { i } else { hi })
        });
        let slope = (v[i1] - v[i0]) / (t.sic[i1] - t.sic[i0]);
        assert!(slope > 0.0);
        for i in 0..v.len() {
            assert!((v[i0] + slope * (t.sic[i] - t.sic[i0]) - v[i]).abs() < 1e-9);
        }
    }
}

#[test]
fn pm_blur_removes_high_frequencies() {
    let t = gen_truth(2, 64).unwrap();
    let sharp = render_pm(&SynthConfig { pm_blur: 0.0, ..quiet() }, &t, 1);
    for r in [1.0, 3.0] {
        let blurred = render_pm(&SynthConfig { pm_blur: r, ..quiet() }, &t, 1);
        for c in 0..2 {
            assert!(roughness(&blurred.channels[c], 64) < roughness(&sharp.channels[c], 64));
        }
    }
}

#[test]
fn weak_labels_are_close_to_truth() {
    let t = gen_truth(4, 32).unwrap();
    let exact = weak_label_with(&SynthConfig { label_blur: 0.0, label_noise: 0.0, ..SynthConfig::default() }, &t, 1);
    assert_eq!(exact, t.sic);
    let (mut abs, mut n) = (0.0, 0usize);
    let (mut sw, mut st, mut sww, mut stt, mut swt) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for seed in 0..100 {
        let t = gen_truth(seed, 64).unwrap();
        let w = weak_label(&t, seed);
        assert_eq!(w, weak_label(&t, seed));
        for (a, b) in w.iter().zip(&t.sic) {
            assert!((0.0..=1.0).contains(a));
            abs += (a - b).abs();
            n += 1;
            sw += a;
            st += b;
            sww += a * a;
            stt += b * b;
            swt += a * b;
        }
    }
    let nf = n as f64;
    let corr = (swt - sw * st / nf) / ((sww - sw * sw / nf).sqrt() * (stt - st * st / nf).sqrt());
    assert!(abs / nf <= 0.1, "mae {}", abs / nf);
    assert!(corr > 0.8, "corr {corr}");
}

#[test]
fn dataset_splits_are_sized_and_disjoint() {
    let recs = build_dataset(100, 7, 16, SplitFractions::default()).unwrap();
    assert_eq!(recs.len(), 300);
    let ids = |sp: Split| recs.iter().filter(|r| r.split == sp).map(|r| r.scene_id).collect::<BTreeSet<_>>();
    let (tr, va, te) = (ids(Split::Train), ids(Split::Val), ids(Split::Test));
    assert_eq!((tr.len(), va.len(), te.len()), (70, 10, 20));
    assert!(tr.is_disjoint(&te) && tr.is_disjoint(&va) && va.is_disjoint(&te));
    for (i, r) in recs.iter().enumerate() {
        assert_eq!((r.scene_id, r.sensor), (i / 3, Sensor::ALL[i % 3]));
        assert_eq!(r.weak_label.len(), 256);
        assert_eq!(r.coverage.len(), 256);
    }
    assert!(matches!(build_dataset(2, 7, 16, SplitFractions::default()), Err(Error::TooFew { .. })));
    let bad = SplitFractions { train: 0.8, val: 0.3, test: 0.2 };
    assert!(matches!(build_dataset(10, 7, 16, bad), Err(Error::Config(_))));
    assert_eq!(SplitFractions::default().counts(3), [1, 1, 1]);
}

#[test]
fn dataset_files_hash_identically_for_identical_seeds() {
    let d = tempfile::tempdir().unwrap();
    let hash = |seed: u64, name: &str| {
        let dir = d.path().join(name);
        write_dataset(&build_dataset(6, seed, 16, SplitFractions::default()).unwrap(), &dir).unwrap();
        dir_hash(&dir)
    };
    let a = hash(3, "a");
    assert_eq!(a, hash(3, "b"));
    assert_ne!(a, hash(4, "c"));
}

#[test]
fn manifest_and_records_round_trip() {
    let d = tempfile::tempdir().unwrap();
    let recs = build_dataset(5, 1, 16, SplitFractions::default()).unwrap();
    let rows = write_dataset(&recs, d.path()).unwrap();
    assert_eq!(read_manifest(d.path()).unwrap(), rows);
    let header = std::fs::read_to_string(d.path().join(MANIFEST_FILE)).unwrap();
    assert_eq!(header.lines().next(), Some("scene_id,split,seed,path"));
    assert_eq!(load_records(d.path(), None, None).unwrap(), recs);
    let test_rcm = load_records(d.path(), Some(Split::Test), Some(Sensor::Rcm)).unwrap();
    assert!(!test_rcm.is_empty());
    assert_eq!(test_rcm, recs.iter().filter(|r| r.split == Split::Test && r.sensor == Sensor::Rcm).cloned().collect::<Vec<_>>());
}

#[test]
fn rendering_order_does_not_matter() {
    let cfg = SynthConfig::default();
    let t = gen_truth(9, 32).unwrap();
    let seeds = |s: Sensor| floeformer::seed::derive(9, s.as_str(), 0);
    let forward: Vec<_> = [Sensor::Sentinel1, Sensor::Rcm].iter().map(|&s| render(&cfg, &t, s, seeds(s)).unwrap()).collect();
    let mut reverse: Vec<_> = [Sensor::Rcm, Sensor::Sentinel1].iter().map(|&s| render(&cfg, &t, s, seeds(s)).unwrap()).collect();
    reverse.reverse();
    assert_eq!(forward, reverse);
    let custom = SynthConfig { truth_modes: 4, ..cfg.clone() };
    let a = build_dataset_with(&custom, 4, 2, 16, SplitFractions::default()).unwrap();
    let t0 = gen_truth_with(&custom, a[0].seed, 16).unwrap();
    assert_eq!(a[0].truth, t0.sic.iter().map(|&v| v as f32).collect::<Vec<_>>());
}

#[test]
fn chip_files_round_trip_bit_exact() {
    let d = tempfile::tempdir().unwrap();
    for r in build_dataset(3, 5, 16, SplitFractions::default()).unwrap() {
        let path = d.path().join(r.file_name());
        write_chip(&path, &r).unwrap();
        let back = read_chip(&path).unwrap();
        assert_eq!(back, r);
        assert_eq!(encode_chip(&back), std::fs::read(&path).unwrap());
    }
}

#[test]
fn corrupted_chips_give_distinct_errors() {
    let r = build_dataset(3, 5, 16, SplitFractions::default()).unwrap().remove(0);
    let bytes = encode_chip(&r);
    let p = Path::new("chip.sicc");
    let mut magic = bytes.clone();
    magic[0] = b'X';
    assert!(matches!(decode_chip(&magic, p), Err(Error::BadMagic { .. })));
    let grid_start = bytes.len() - 3 * 256 * 4;
    assert!(matches!(decode_chip(&bytes[..grid_start], p), Err(Error::Truncated { .. })));
    assert!(matches!(decode_chip(&bytes[..12], p), Err(Error::Truncated { .. })));
    assert!(matches!(decode_chip(&bytes[..2], p), Err(Error::Truncated { .. })));
    assert!(matches!(decode_chip(b"PK", p), Err(Error::BadMagic { .. })));
    let mut channels = bytes.clone();
    channels[10] = 3;
    assert!(matches!(decode_chip(&channels, p), Err(Error::FormatDimension { .. })));
    let mut side = bytes.clone();
    side[5..9].copy_from_slice(&0u32.to_le_bytes());
    assert!(matches!(decode_chip(&side, p), Err(Error::FormatDimension { .. })));
    let mut trailing = bytes.clone();
    trailing.push(0);
    assert!(matches!(decode_chip(&trailing, p), Err(Error::Malformed { .. })));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]
    #[test]
    fn truth_and_labels_stay_in_unit_interval(seed in any::<u64>(), side in 16usize..40) {
        let t = gen_truth(seed, side).unwrap();
        prop_assert!(t.sic.iter().all(|s| (0.0..=1.0).contains(s)));
        prop_assert!(weak_label(&t, seed).iter().all(|s| (0.0..=1.0).contains(s)));
    }
}
