//! Grid helpers shared by the forward models.

use std::f64::consts::PI;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

/// Sum of random cosine modes on a `side x side` grid, scaled to unit
/// theoretical standard deviation.
pub(crate) fn cosine_field(rng: &mut ChaCha8Rng, side: usize, modes: usize, cycles: (f64, f64)) -> Vec<f64> {
    let mut params = Vec::with_capacity(modes);
    let mut power: f64 = 0.0;
    for _ in 0..modes {
        let k = rng.random_range(cycles.0..=cycles.1);
        let theta = rng.random_range(0.0..PI);
        let phase = rng.random_range(0.0..2.0 * PI);
        let amp = rng.random_range(0.5..1.0);
        power += amp * amp / 2.0;
        params.push((k * theta.cos(), k * theta.sin(), phase, amp));
    }
    let norm = power.sqrt().max(f64::MIN_POSITIVE);
    let n = side as f64;
    let mut out = vec![0.0; side * side];
    for y in 0..side {
        for x in 0..side {
            let (u, v) = (x as f64 / n, y as f64 / n);
            out[y * side + x] = params.iter().map(|&(kx, ky, ph, a)| a * (2.0 * PI * (kx * u + ky * v) + ph).cos()).sum::<f64>() / norm;
        }
    }
    out
}

fn kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

/// Separable Gaussian blur with edge clamping; `sigma <= 0` is the identity.
pub(crate) fn gaussian_blur(grid: &[f64], side: usize, sigma: f64) -> Vec<f64> {
    if sigma <= 0.0 {
        return grid.to_vec();
    }
    let k = kernel(sigma);
    let r = (k.len() / 2) as isize;
    let last = side as isize - 1;
    let mut tmp = vec![0.0; grid.len()];
    for y in 0..side {
        for x in 0..side {
            tmp[y * side + x] =
                k.iter().enumerate().map(|(i, w)| w * grid[y * side + (x as isize + i as isize - r).clamp(0, last) as usize]).sum();
        }
    }
    let mut out = vec![0.0; grid.len()];
    for y in 0..side {
        for x in 0..side {
            out[y * side + x] =
                k.iter().enumerate().map(|(i, w)| w * tmp[(y as isize + i as isize - r).clamp(0, last) as usize * side + x]).sum();
        }
    }
    out
}

/// Half-plane swath mask covering roughly `fraction` of the chip.
pub(crate) fn swath(rng: &mut ChaCha8Rng, side: usize, fraction: (f64, f64)) -> Vec<bool> {
    let f = rng.random_range(fraction.0..=fraction.1);
    let theta = rng.random_range(0.0..2.0 * PI);
    let (dx, dy) = (theta.cos(), theta.sin());
    let proj: Vec<f64> = (0..side * side).map(|i| ((i % side) as f64 + 0.5) * dx + ((i / side) as f64 + 0.5) * dy).collect();
    let mut sorted = proj.clone();
    sorted.sort_by(f64::total_cmp);
    let cut_index = ((1.0 - f) * sorted.len() as f64).floor() as usize;
    let cut = sorted[cut_index.min(sorted.len() - 1)];
    proj.iter().map(|&p| p >= cut).collect()
}
