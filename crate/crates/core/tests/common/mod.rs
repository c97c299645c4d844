//! Test-only oracles shared by the integration suites.
#![allow(dead_code)]

use floeformer::{Real, Result, Tape, Tensor, Var};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_tensor<T: Real>(rng: &mut ChaCha8Rng, shape: &[usize], scale: f64) -> Tensor<T> {
    let n: usize = shape.iter().product();
    Tensor::new(shape, (0..n).map(|_| T::of(rng.random_range(-scale..scale))).collect()).unwrap()
}

/// Norm-wise relative error `|a - b| / max(|a|, |b|)` (0 when both vanish).
pub fn rel_error(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let scale = na.max(nb);
    if scale == 0.0 {
        0.0
    } else {
        diff / scale
    }
}

/// Compares reverse-mode gradients of `build(leaves) -> scalar` against central
/// finite differences for every input. Returns the norm-wise relative error of
/// the concatenated gradient, so inputs whose exact gradient vanishes (such as
/// key biases under softmax) are judged against the whole gradient's scale.
pub fn grad_check<T: Real>(
    inputs: &[Tensor<T>],
    step: f64,
    build: impl Fn(&mut Tape<T>, &[Var]) -> Result<Var>,
) -> f64 {
    let eval = |vals: &[Tensor<T>]| -> f64 {
        let mut tape = Tape::new();
        let vars: Vec<Var> = vals.iter().map(|t| tape.constant(t.clone())).collect();
        let out = build(&mut tape, &vars).unwrap();
        tape.value(out).data()[0].f64()
    };
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.param(t.clone())).collect();
    let loss = build(&mut tape, &vars).unwrap();
    let grads = tape.backward(loss).unwrap();
    let mut analytic = Vec::new();
    let mut numeric = Vec::new();
    for (i, v) in vars.iter().enumerate() {
        analytic.extend(grads.wrt(*v).unwrap().to_f64());
        let mut probe = inputs.to_vec();
        for j in 0..inputs[i].len() {
            let x = inputs[i].data()[j].f64();
            probe[i].update(|d| d[j] = T::of(x + step)).unwrap();
            let plus = eval(&probe);
            probe[i].update(|d| d[j] = T::of(x - step)).unwrap();
            let minus = eval(&probe);
            probe[i].update(|d| d[j] = inputs[i].data()[j]).unwrap();
            numeric.push((plus - minus) / (2.0 * step));
        }
    }
    rel_error(&analytic, &numeric)
}

/// Reduces any tensor to a scalar with fixed random weights, so every output
/// element influences the loss differently.
pub fn weighted_sum<T: Real>(tape: &mut Tape<T>, v: Var, seed: u64) -> Result<Var> {
    let n = tape.value(v).len();
    let mut r = rng(seed);
    let w: Vec<T> = (0..n).map(|_| T::of(r.random_range(-1.0..1.0))).collect();
    let p = tape.mul_const(v, w)?;
    tape.sum(p)
}

/// Direct triple-loop matrix product of row-major `m x k` and `k x n`.
pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut c = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            for p in 0..k {
                c[i * n + j] += a[i * k + p] * b[p * n + j];
            }
        }
    }
    c
}

pub fn naive_softmax_rows(x: &[f64], d: usize) -> Vec<f64> {
    x.chunks(d)
        .flat_map(|row| {
            let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = row.iter().map(|v| (v - m).exp()).collect();
            let s: f64 = e.iter().sum();
            e.into_iter().map(move |v| v / s)
        })
        .collect()
}

/// Single-head scaled dot-product self-attention on an `s x e` matrix with
/// `e x e` projections (weights row-major, `x * W + b`).
#[allow(clippy::too_many_arguments)]
pub fn naive_attention(
    x: &[f64],
    s: usize,
    e: usize,
    heads: usize,
    wq: (&[f64], &[f64]),
    wk: (&[f64], &[f64]),
    wv: (&[f64], &[f64]),
    wo: (&[f64], &[f64]),
) -> Vec<f64> {
    let proj = |w: (&[f64], &[f64]), inp: &[f64]| -> Vec<f64> {
        let mut y = naive_matmul(inp, w.0, s, e, e);
        for r in 0..s {
            for c in 0..e {
                y[r * e + c] += w.1[c];
            }
        }
        y
    };
    let (q, k, v) = (proj(wq, x), proj(wk, x), proj(wv, x));
    let dk = e / heads;
    let mut ctx = vec![0.0; s * e];
    for h in 0..heads {
        for i in 0..s {
            let mut scores = vec![0.0; s];
            for j in 0..s {
                let mut dot = 0.0;
                for c in 0..dk {
                    dot += q[i * e + h * dk + c] * k[j * e + h * dk + c];
                }
                scores[j] = dot / (dk as f64).sqrt();
            }
            let a = naive_softmax_rows(&scores, s);
            for j in 0..s {
                for c in 0..dk {
                    ctx[i * e + h * dk + c] += a[j] * v[j * e + h * dk + c];
                }
            }
        }
    }
    proj(wo, &ctx)
}

/// Bilinear (align-corners false) resampling of an `h x w` grid by direct evaluation.
pub fn naive_bilinear(src: &[f64], h: usize, w: usize, oh: usize, ow: usize) -> Vec<f64> {
    let coord = |o: usize, inp: usize, out: usize| -> (usize, usize, f64) {
        let x = ((o as f64 + 0.5) * inp as f64 / out as f64 - 0.5).clamp(0.0, (inp - 1) as f64);
        let x0 = x.floor() as usize;
        let x1 = (x0 + 1).min(inp - 1);
        (x0, x1, x - x0 as f64)
    };
    let mut out = Vec::with_capacity(oh * ow);
    for y in 0..oh {
        let (y0, y1, ly) = coord(y, h, oh);
        for x in 0..ow {
            let (x0, x1, lx) = coord(x, w, ow);
            let v = (1.0 - ly) * ((1.0 - lx) * src[y0 * w + x0] + lx * src[y0 * w + x1])
                + ly * ((1.0 - lx) * src[y1 * w + x0] + lx * src[y1 * w + x1]);
            out.push(v);
        }
    }
    out
}

/// Trapezoidal quadrature of `integral q(w) ln(q(w) / p(w)) dw` for
/// `q = N(mu, sigma^2)`, `p = N(0, 1)`.
pub fn kl_quadrature(mu: f64, sigma: f64) -> f64 {
    let lo = mu - 12.0 * sigma;
    let hi = mu + 12.0 * sigma;
    let n = 200_000;
    let h = (hi - lo) / n as f64;
    let integrand = |w: f64| {
        let z = (w - mu) / sigma;
        let log_q = -0.5 * z * z - sigma.ln() - 0.5 * (2.0 * std::f64::consts::PI).ln();
        let log_p = -0.5 * w * w - 0.5 * (2.0 * std::f64::consts::PI).ln();
        log_q.exp() * (log_q - log_p)
    };
    let mut s = 0.5 * (integrand(lo) + integrand(hi));
    for i in 1..n {
        s += integrand(lo + i as f64 * h);
    }
    s * h
}

pub fn naive_layer_norm(x: &[f64], d: usize, gain: &[f64], shift: &[f64]) -> Vec<f64> {
    x.chunks(d)
        .flat_map(|row| {
            let m = row.iter().sum::<f64>() / d as f64;
            let v = row.iter().map(|a| (a - m) * (a - m)).sum::<f64>() / d as f64;
            let inv = 1.0 / (v + 1e-5).sqrt();
            row.iter().enumerate().map(move |(i, a)| (a - m) * inv * gain[i] + shift[i]).collect::<Vec<_>>()
        })
        .collect()
}

/// One pre-norm attention block on an `s x e` matrix, evaluated directly.
pub fn naive_block(
    x: &[f64],
    s: usize,
    e: usize,
    cfg: &floeformer::net::NetConfig,
    p: &floeformer::net::ParamStore<f64>,
    prefix: &str,
) -> Vec<f64> {
    let get = |n: &str| p.get(&format!("{prefix}.{n}")).unwrap().data().to_vec();
    let inp = if cfg.norm { naive_layer_norm(x, e, &get("norm.gain"), &get("norm.shift")) } else { x.to_vec() };
    let w = |n: &str| (get(&format!("{n}.weight")), get(&format!("{n}.bias")));
    let (q, k, v, o) = (w("q"), w("k"), w("v"), w("o"));
    let y = naive_attention(&inp, s, e, cfg.heads, (&q.0, &q.1), (&k.0, &k.1), (&v.0, &v.1), (&o.0, &o.1));
    if cfg.residual {
        x.iter().zip(&y).map(|(a, b)| a + b).collect()
    } else {
        y
    }
}

/// Direct evaluation of the whole network on one `(C, H0, W0)` chip, returning
/// the `H0 x W0` SIC map.
pub fn oracle_forward(x: &[f64], cfg: &floeformer::net::NetConfig, p: &floeformer::net::ParamStore<f64>) -> Vec<f64> {
    let (g, hs, ps, c, f) = (cfg.token_grid, cfg.token_side, cfg.patch_side, cfg.in_channels, cfg.hidden);
    let side = cfg.chip_side;
    let (t_count, hw, dim) = (g * g, hs * hs, hs * hs * f);
    let get = |n: &str| p.get(n).unwrap().data().to_vec();
    let (we, be) = (get("embed.weight"), get("embed.bias"));
    let mut tokens = vec![vec![0.0; dim]; t_count];
    for ty in 0..g {
        for tx in 0..g {
            for hy in 0..hs {
                for hx in 0..hs {
                    let mut input = Vec::with_capacity(c * ps * ps);
                    for ch in 0..c {
                        for py in 0..ps {
                            for px in 0..ps {
                                let y = (ty * hs + hy) * ps + py;
                                let xx = (tx * hs + hx) * ps + px;
                                input.push(x[ch * side * side + y * side + xx]);
                            }
                        }
                    }
                    let feat = naive_matmul(&input, &we, 1, c * ps * ps, f);
                    let pos = hy * hs + hx;
                    for k in 0..f {
                        tokens[ty * g + tx][pos * f + k] = feat[k] + be[k];
                    }
                }
            }
        }
    }
    let mut stages = Vec::with_capacity(cfg.repeats);
    for r in 0..cfg.repeats {
        let flat: Vec<f64> = tokens.concat();
        let glo = naive_block(&flat, t_count, dim, cfg, p, &format!("stage{r}.glo"));
        tokens = glo
            .chunks(dim)
            .map(|tok| naive_block(tok, hw, f, cfg, p, &format!("stage{r}.lo")))
            .collect();
        stages.push(tokens.clone());
    }
    let (wh, bh) = (get("head.weight"), get("head.bias"));
    let pg = g * hs;
    let mut coarse = vec![0.0; pg * pg];
    for ty in 0..g {
        for tx in 0..g {
            for hy in 0..hs {
                for hx in 0..hs {
                    let pos = hy * hs + hx;
                    let mut logit = bh[0];
                    for (r, st) in stages.iter().enumerate() {
                        for k in 0..f {
                            logit += st[ty * g + tx][pos * f + k] * wh[r * f + k];
                        }
                    }
                    coarse[(ty * hs + hy) * pg + tx * hs + hx] = logit;
                }
            }
        }
    }
    naive_bilinear(&coarse, pg, pg, side, side).into_iter().map(|v| (1.0 / (1.0 + (-v).exp())).clamp(0.0, 1.0)).collect()
}

/// Smallest network that still exercises every stage: 8x8 chips, 2x2 tokens of 2x2 patches.
pub fn tiny_config() -> floeformer::net::NetConfig {
    floeformer::net::NetConfig {
        in_channels: 2,
        chip_side: 8,
        token_grid: 2,
        token_side: 2,
        patch_side: 2,
        hidden: 4,
        heads: 2,
        repeats: 2,
        residual: true,
        norm: true,
    }
}

/// Chips whose first channel is an affine image of the label, on a `side x side` grid.
pub fn toy_samples<T: Real>(n: usize, side: usize, seed: u64) -> Vec<floeformer::train::TrainSample<T>> {
    use floeformer::train::{ConfidenceClass, TrainSample};
    let mut r = rng(seed);
    (0..n)
        .map(|_| {
            let (a, gx, gy): (f64, f64, f64) = (r.random_range(0.0..1.0), r.random_range(-0.5..0.5), r.random_range(-0.5..0.5));
            let label: Vec<f64> = (0..side * side)
                .map(|i| {
                    let (x, y) = ((i % side) as f64 / side as f64, (i / side) as f64 / side as f64);
                    (a + gx * (x - 0.5) + gy * (y - 0.5)).clamp(0.0, 1.0)
                })
                .collect();
            let mut chip: Vec<f64> = label.iter().map(|l| 2.0 * l - 1.0).collect();
            chip.extend(label.iter().map(|_| r.random_range(-0.1..0.1)));
            TrainSample {
                chip: Tensor::from_f64(&[2, side, side], &chip).unwrap(),
                label: label.iter().map(|&l| T::of(l)).collect(),
                classes: label.iter().map(|&l| ConfidenceClass::of_sic(l)).collect(),
            }
        })
        .collect()
}

/// Root-mean-square over pixels of the across-run standard deviation of the
/// BBB mean map, using `runs` disjoint seed blocks of `samples` passes.
pub fn bbb_mean_spread<T: Real>(model: &floeformer::net::Model<T>, chips: &Tensor<T>, samples: usize, runs: usize) -> f64 {
    let means: Vec<Vec<f64>> = (0..runs)
        .map(|r| {
            let fields = floeformer::uq::bbb_predict(model, chips, samples, 1_000_003 * (r as u64 + 1)).unwrap();
            fields.iter().flat_map(|f| f.mean.iter().map(|&m| m as f64)).collect()
        })
        .collect();
    let n = means[0].len();
    let mut acc = 0.0;
    for i in 0..n {
        let m = means.iter().map(|v| v[i]).sum::<f64>() / runs as f64;
        acc += means.iter().map(|v| (v[i] - m).powi(2)).sum::<f64>() / (runs - 1) as f64;
    }
    (acc / n as f64).sqrt()
}

/// Finite-difference errors of every differentiable tape op on one random
/// instance (`trial` picks the instance). Each entry is `(op, relative error)`.
pub fn op_gradient_errors(trial: u64) -> Vec<(&'static str, f64)> {
    const H: f64 = 1e-6;
    let mut r = rng(100 + trial);
    let a = random_tensor::<f64>(&mut r, &[2, 3, 4], 1.0);
    let b = random_tensor::<f64>(&mut r, &[2, 3, 4], 1.0);
    let m = random_tensor::<f64>(&mut r, &[2, 4, 3], 1.0);
    let w = random_tensor::<f64>(&mut r, &[4, 5], 1.0);
    let bias = random_tensor::<f64>(&mut r, &[4], 1.0);
    let gain = random_tensor::<f64>(&mut r, &[4], 1.0);
    let pos = Tensor::<f64>::new(&[2, 3, 4], a.data().iter().map(|v| v.abs() + 0.5).collect()).unwrap();
    let s = 10 + trial;
    vec![
        ("matmul batched", grad_check(&[a.clone(), m.clone()], H, |t, v| {
            let o = t.matmul(v[0], v[1])?;
            weighted_sum(t, o, s)
        })),
        ("matmul shared", grad_check(&[a.clone(), w.clone()], H, |t, v| {
            let o = t.matmul(v[0], v[1])?;
            weighted_sum(t, o, s)
        })),
        ("permute", grad_check(std::slice::from_ref(&a), H, |t, v| {
            let o = t.permute(v[0], &[2, 0, 1])?;
            weighted_sum(t, o, s)
        })),
        ("reshape", grad_check(std::slice::from_ref(&a), H, |t, v| {
            let o = t.reshape(v[0], &[6, 4])?;
            weighted_sum(t, o, s)
        })),
        ("add/sub/mul", grad_check(&[a.clone(), b.clone()], H, |t, v| {
            let x = t.add(v[0], v[1])?;
            let y = t.sub(x, v[1])?;
            let z = t.mul(y, v[1])?;
            weighted_sum(t, z, s)
        })),
        ("scale/add_scalar", grad_check(std::slice::from_ref(&a), H, |t, v| {
            let x = t.scale(v[0], -1.7)?;
            let x = t.add_scalar(x, 0.3)?;
            weighted_sum(t, x, s)
        })),
        ("add_bias", grad_check(&[a.clone(), bias.clone()], H, |t, v| {
            let o = t.add_bias(v[0], v[1])?;
            weighted_sum(t, o, s)
        })),
        ("softmax", grad_check(std::slice::from_ref(&a), H, |t, v| {
            let o = t.softmax_lastdim(v[0])?;
            weighted_sum(t, o, s)
        })),
        ("layer_norm", grad_check(&[a.clone(), gain.clone(), bias.clone()], H, |t, v| {
            let o = t.layer_norm(v[0], v[1], v[2])?;
            weighted_sum(t, o, s)
        })),
        ("sigmoid", grad_check(std::slice::from_ref(&a), H, |t, v| {
            let o = t.sigmoid(v[0])?;
            weighted_sum(t, o, s)
        })),
        ("softplus", grad_check(std::slice::from_ref(&a), H, |t, v| {
            let o = t.softplus(v[0])?;
            weighted_sum(t, o, s)
        })),
        ("ln", grad_check(std::slice::from_ref(&pos), H, |t, v| {
            let o = t.ln(v[0])?;
            weighted_sum(t, o, s)
        })),
        ("abs", grad_check(std::slice::from_ref(&a), H, |t, v| {
            let o = t.abs(v[0])?;
            weighted_sum(t, o, s)
        })),
        ("square", grad_check(std::slice::from_ref(&a), H, |t, v| {
            let o = t.square(v[0])?;
            weighted_sum(t, o, s)
        })),
        ("clamp", grad_check(std::slice::from_ref(&a), H, |t, v| {
            let o = t.clamp(v[0], -0.5, 0.5)?;
            weighted_sum(t, o, s)
        })),
        ("mean", grad_check(std::slice::from_ref(&a), H, |t, v| {
            let o = t.square(v[0])?;
            t.mean(o)
        })),
        ("bilinear", grad_check(std::slice::from_ref(&a), H, |t, v| {
            let o = t.bilinear_upsample(v[0], 5, 9)?;
            weighted_sum(t, o, s)
        })),
        ("stack", grad_check(&[a.clone(), b.clone()], H, |t, v| {
            let o = t.stack(&[v[0], v[1], v[0]])?;
            weighted_sum(t, o, s)
        })),
        ("kl", grad_check(&[a.clone(), b.clone()], H, |t, v| t.kl_std_normal(v[0], v[1]))),
    ]
}

/// Parameters with non-trivial norms and biases so every path is exercised.
pub fn perturbed_params(cfg: &floeformer::net::NetConfig, seed: u64) -> floeformer::net::ParamStore<f64> {
    let mut p = floeformer::net::init_params::<f64>(cfg, seed).unwrap();
    let mut r = rng(seed ^ 0xabc);
    for (name, t) in p.iter_mut() {
        if !name.ends_with(".weight") {
            let noise = random_tensor::<f64>(&mut r, t.shape(), 0.3);
            t.update(|d| d.iter_mut().zip(noise.data()).for_each(|(a, b)| *a += b)).unwrap();
        }
    }
    p
}

/// Finite-difference error of the whole tiny network (input chip and every
/// parameter) on one random instance.
pub fn tiny_network_gradient_error<T: Real>(trial: u64, step: f64) -> f64 {
    use floeformer::net::{forward, BoundParams, DropoutPlan};
    let cfg = tiny_config();
    let names: Vec<String> = floeformer::net::init_params::<f64>(&cfg, 0).unwrap().names().cloned().collect();
    let p = perturbed_params(&cfg, 100 + trial).cast::<T>();
    let mut inputs: Vec<Tensor<T>> = vec![random_tensor::<T>(&mut rng(200 + trial), &[1, 2, 8, 8], 1.0)];
    inputs.extend(names.iter().map(|n| p.get(n).unwrap().clone()));
    grad_check(&inputs, step, |tape, vars| {
        let mut b = BoundParams::default();
        for (n, v) in names.iter().zip(&vars[1..]) {
            b.insert(n.clone(), *v);
        }
        let out = forward(tape, vars[0], &cfg, &b, &DropoutPlan::off())?;
        weighted_sum(tape, out.sic, 300 + trial)
    })
}
