//! The among-token (GloFormer) / within-token (LoFormer) attention network.
//!
//! Stage shapes for a batch of `B` chips:
//!
//! ```text
//! chip      (B, C, H0, W0)
//! tokens    (B, T, F*H*W)      token vector index = patch_pos * F + feature
//! local     (B*T, H*W, F)
//! stacked   (R, B, T, F*H*W)
//! sic       (B, 1, H0, W0)
//! ```

pub mod config;
pub mod model;
pub mod params;

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::real::Real;
use crate::seed;
use crate::tape::{DropoutMode, Tape, Var};

pub use config::NetConfig;
pub use model::{Model, ModelKind, Weights};
pub use params::{init_params, ParamStore};

/// Parameters bound to tape variables for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct BoundParams {
    vars: HashMap<String, Var>,
}

impl BoundParams {
    pub fn insert(&mut self, name: impl Into<String>, v: Var) {
        self.vars.insert(name.into(), v);
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars.get(name).copied().ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn linear(&self, prefix: &str) -> Result<Linear> {
        Ok(Linear { weight: self.get(&format!("{prefix}.weight"))?, bias: self.get(&format!("{prefix}.bias"))? })
    }

    pub fn block(&self, prefix: &str, norm: bool) -> Result<BlockParams> {
        let norm = if norm {
            Some((self.get(&format!("{prefix}.norm.gain"))?, self.get(&format!("{prefix}.norm.shift"))?))
        } else {
            None
        };
        Ok(BlockParams {
            norm,
            q: self.linear(&format!("{prefix}.q"))?,
            k: self.linear(&format!("{prefix}.k"))?,
            v: self.linear(&format!("{prefix}.v"))?,
            o: self.linear(&format!("{prefix}.o"))?,
        })
    }
}

#[derive(Clone, Copy, Debug)]
pub struct Linear {
    pub weight: Var,
    pub bias: Var,
}

impl Linear {
    pub fn apply<T: Real>(&self, tape: &mut Tape<T>, x: Var) -> Result<Var> {
        let y = tape.matmul(x, self.weight)?;
        tape.add_bias(y, self.bias)
    }
}

/// One attention block: optional pre-norm, Q/K/V projections and the output
/// projection applied to the concatenated heads.
#[derive(Clone, Copy, Debug)]
pub struct BlockParams {
    pub norm: Option<(Var, Var)>,
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
}

/// Where dropout is applied: after every block's output projection.
#[derive(Clone, Copy, Debug)]
pub struct DropoutPlan {
    pub p: f64,
    pub mode: DropoutMode,
    pub seed: u64,
}

impl DropoutPlan {
    pub fn off() -> Self {
        Self { p: 0.0, mode: DropoutMode::InferOff, seed: 0 }
    }

    fn apply<T: Real>(&self, tape: &mut Tape<T>, x: Var, site: u64) -> Result<Var> {
        tape.dropout(x, self.p, self.mode, seed::derive(self.seed, "dropout", site))
    }
}

#[derive(Clone, Debug)]
pub struct BlockOutput {
    pub out: Var,
    /// Attention weights, shape (N, heads, S, S).
    pub attention: Var,
}

/// Multi-head self-attention over the middle axis of `x: (N, S, E)`.
#[allow(clippy::too_many_arguments)]
pub fn attention_block<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    heads: usize,
    p: &BlockParams,
    residual: bool,
    dropout: &DropoutPlan,
    site: u64,
) -> Result<BlockOutput> {
    let shape = tape.shape(x).to_vec();
    if shape.len() != 3 || !shape[2].is_multiple_of(heads) {
        return Err(Error::Dimension { op: "attention", lhs: shape, rhs: vec![heads] });
    }
    let (n, s, e) = (shape[0], shape[1], shape[2]);
    let dk = e / heads;
    let input = match p.norm {
        Some((gain, shift)) => tape.layer_norm(x, gain, shift)?,
        None => x,
    };
    let split = |tape: &mut Tape<T>, lin: &Linear| -> Result<Var> {
        let y = lin.apply(tape, input)?;
        let y = tape.reshape(y, &[n, s, heads, dk])?;
        tape.permute(y, &[0, 2, 1, 3])
    };
    let q = split(tape, &p.q)?;
    let k = split(tape, &p.k)?;
    let v = split(tape, &p.v)?;
    let kt = tape.transpose_last2(k)?;
    let scores = tape.matmul(q, kt)?;
    let scores = tape.scale(scores, 1.0 / (dk as f64).sqrt())?;
    let attention = tape.softmax_lastdim(scores)?;
    let ctx = tape.matmul(attention, v)?;
    let ctx = tape.permute(ctx, &[0, 2, 1, 3])?;
    let ctx = tape.reshape(ctx, &[n, s, e])?;
    let projected = p.o.apply(tape, ctx)?;
    let projected = dropout.apply(tape, projected, site)?;
    let out = if residual { tape.add(x, projected)? } else { projected };
    Ok(BlockOutput { out, attention })
}

/// Splits chips into token vectors of projected patches: (B,C,H0,W0) -> (B,T,F*H*W).
pub fn patch_merge<T: Real>(tape: &mut Tape<T>, x: Var, cfg: &NetConfig, proj: &Linear) -> Result<Var> {
    let shape = tape.shape(x).to_vec();
    let expected = [cfg.in_channels, cfg.chip_side, cfg.chip_side];
    if shape.len() != 4 || shape[1..] != expected {
        return Err(Error::Dimension { op: "patch_merge", lhs: shape, rhs: expected.to_vec() });
    }
    let b = shape[0];
    let (g, hs, ps) = (cfg.token_grid, cfg.token_side, cfg.patch_side);
    // (B, C, ty, hy, py, tx, hx, px)
    let x = tape.reshape(x, &[b, cfg.in_channels, g, hs, ps, g, hs, ps])?;
    // (B, ty, tx, hy, hx, C, py, px)
    let x = tape.permute(x, &[0, 2, 5, 3, 6, 1, 4, 7])?;
    let x = tape.reshape(x, &[b, cfg.tokens(), cfg.patches_per_token(), cfg.patch_inputs()])?;
    let x = proj.apply(tape, x)?;
    tape.reshape(x, &[b, cfg.tokens(), cfg.token_dim()])
}

/// (B, T, F*H*W) -> (B*T, H*W, F). A pure view change.
pub fn to_local<T: Real>(tape: &mut Tape<T>, g: Var, cfg: &NetConfig) -> Result<Var> {
    let b = batch_of(tape, g, cfg)?;
    tape.reshape(g, &[b * cfg.tokens(), cfg.patches_per_token(), cfg.hidden])
}

/// Inverse of [`to_local`].
pub fn to_global<T: Real>(tape: &mut Tape<T>, l: Var, cfg: &NetConfig) -> Result<Var> {
    let n = tape.shape(l)[0];
    if !n.is_multiple_of(cfg.tokens()) {
        return Err(Error::Dimension { op: "to_global", lhs: tape.shape(l).to_vec(), rhs: vec![cfg.tokens()] });
    }
    tape.reshape(l, &[n / cfg.tokens(), cfg.tokens(), cfg.token_dim()])
}

fn batch_of<T: Real>(tape: &Tape<T>, g: Var, cfg: &NetConfig) -> Result<usize> {
    let s = tape.shape(g);
    if s.len() != 3 || s[1] != cfg.tokens() || s[2] != cfg.token_dim() {
        return Err(Error::Dimension { op: "tokens", lhs: s.to_vec(), rhs: vec![cfg.tokens(), cfg.token_dim()] });
    }
    Ok(s[0])
}

/// Among-token attention over the `T` tokens of each chip.
pub fn gloformer_block<T: Real>(
    tape: &mut Tape<T>,
    g: Var,
    cfg: &NetConfig,
    p: &BlockParams,
    dropout: &DropoutPlan,
    site: u64,
) -> Result<BlockOutput> {
    batch_of(tape, g, cfg)?;
    attention_block(tape, g, cfg.heads, p, cfg.residual, dropout, site)
}

/// Within-token attention over the `H*W` patches of each token independently.
pub fn loformer_block<T: Real>(
    tape: &mut Tape<T>,
    l: Var,
    cfg: &NetConfig,
    p: &BlockParams,
    dropout: &DropoutPlan,
    site: u64,
) -> Result<BlockOutput> {
    let s = tape.shape(l);
    if s.len() != 3 || s[1] != cfg.patches_per_token() || s[2] != cfg.hidden {
        return Err(Error::Dimension { op: "loformer", lhs: s.to_vec(), rhs: vec![cfg.patches_per_token(), cfg.hidden] });
    }
    attention_block(tape, l, cfg.heads, p, cfg.residual, dropout, site)
}

/// Maps stacked stage features (R,B,T,F*H*W) to a SIC map (B,1,H0,W0):
/// per-patch concatenation over stages, linear projection to one logit,
/// bilinear upsampling of the patch grid and a clamped sigmoid.
pub fn interpolation_head<T: Real>(tape: &mut Tape<T>, z: Var, cfg: &NetConfig, head: &Linear) -> Result<Var> {
    let s = tape.shape(z).to_vec();
    if s.len() != 4 || s[0] != cfg.repeats || s[2] != cfg.tokens() || s[3] != cfg.token_dim() {
        return Err(Error::Dimension {
            op: "interpolation_head",
            lhs: s,
            rhs: vec![cfg.repeats, cfg.tokens(), cfg.token_dim()],
        });
    }
    let (r, b) = (cfg.repeats, s[1]);
    let (t, hw, f) = (cfg.tokens(), cfg.patches_per_token(), cfg.hidden);
    let z = tape.reshape(z, &[r, b, t, hw, f])?;
    let z = tape.permute(z, &[1, 2, 3, 0, 4])?;
    let z = tape.reshape(z, &[b, t, hw, r * f])?;
    let logits = head.apply(tape, z)?;
    let (g, hs) = (cfg.token_grid, cfg.token_side);
    // (B, ty, tx, hy, hx) -> (B, ty, hy, tx, hx)
    let logits = tape.reshape(logits, &[b, g, g, hs, hs])?;
    let logits = tape.permute(logits, &[0, 1, 3, 2, 4])?;
    let coarse = tape.reshape(logits, &[b, 1, cfg.patch_grid(), cfg.patch_grid()])?;
    let fine = tape.bilinear_upsample(coarse, cfg.chip_side, cfg.chip_side)?;
    let sic = tape.sigmoid(fine)?;
    tape.clamp(sic, 0.0, 1.0)
}

#[derive(Clone, Debug)]
pub struct ForwardOutput {
    pub sic: Var,
    pub stacked: Var,
    /// Attention weights of every block in execution order (glo, lo, glo, lo, ...).
    pub attention: Vec<Var>,
}

/// Full network: patch merging, `R` GloFormer -> LoFormer stages, interpolation head.
pub fn forward<T: Real>(
    tape: &mut Tape<T>,
    x: Var,
    cfg: &NetConfig,
    params: &BoundParams,
    dropout: &DropoutPlan,
) -> Result<ForwardOutput> {
    cfg.validate()?;
    let mut g = patch_merge(tape, x, cfg, &params.linear("embed")?)?;
    let mut stages = Vec::with_capacity(cfg.repeats);
    let mut attention = Vec::with_capacity(2 * cfg.repeats);
    for r in 0..cfg.repeats {
        let glo = params.block(&params::stage_prefix(r, "glo"), cfg.norm)?;
        let lo = params.block(&params::stage_prefix(r, "lo"), cfg.norm)?;
        let out = gloformer_block(tape, g, cfg, &glo, dropout, 2 * r as u64)?;
        attention.push(out.attention);
        let l = to_local(tape, out.out, cfg)?;
        let out = loformer_block(tape, l, cfg, &lo, dropout, 2 * r as u64 + 1)?;
        attention.push(out.attention);
        g = to_global(tape, out.out, cfg)?;
        stages.push(g);
    }
    let stacked = tape.stack(&stages)?;
    let sic = interpolation_head(tape, stacked, cfg, &params.linear("head")?)?;
    Ok(ForwardOutput { sic, stacked, attention })
}
