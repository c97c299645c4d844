use std::collections::BTreeMap;

use crate::error::{Error, Result};

/// Shape configuration of the attention network.
///
/// A square chip of side `chip_side` is cut into `token_grid x token_grid`
/// tokens; each token holds `token_side x token_side` patches of
/// `patch_side x patch_side` pixels.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct NetConfig {
    pub in_channels: usize,
    pub chip_side: usize,
    pub token_grid: usize,
    pub token_side: usize,
    pub patch_side: usize,
    pub hidden: usize,
    pub heads: usize,
    pub repeats: usize,
    pub residual: bool,
    pub norm: bool,
}

impl Default for NetConfig {
    fn default() -> Self {
        Self {
            in_channels: 2,
            chip_side: 64,
            token_grid: 4,
            token_side: 4,
            patch_side: 4,
            hidden: 16,
            heads: 4,
            repeats: 4,
            residual: true,
            norm: true,
        }
    }
}

impl NetConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        let positive = [
            ("in_channels", self.in_channels),
            ("chip_side", self.chip_side),
            ("token_grid", self.token_grid),
            ("token_side", self.token_side),
            ("patch_side", self.patch_side),
            ("hidden", self.hidden),
            ("heads", self.heads),
            ("repeats", self.repeats),
        ];
        if let Some((name, _)) = positive.iter().find(|(_, v)| *v == 0) {
            return fail(format!("{name} must be positive"));
        }
        if self.token_grid * self.token_side * self.patch_side != self.chip_side {
            return fail(format!(
                "chip side {} does not tile into {}x{} tokens of {} patches of side {}",
                self.chip_side, self.token_grid, self.token_grid, self.token_side, self.patch_side
            ));
        }
        if !self.token_dim().is_multiple_of(self.heads) {
            return fail(format!("token dim {} not divisible by {} heads", self.token_dim(), self.heads));
        }
        if !self.hidden.is_multiple_of(self.heads) {
            return fail(format!("hidden dim {} not divisible by {} heads", self.hidden, self.heads));
        }
        if self.norm && self.hidden < 2 {
            return fail("layer norm needs hidden >= 2".into());
        }
        Ok(())
    }

    /// Number of tokens `T`.
    pub fn tokens(&self) -> usize {
        self.token_grid * self.token_grid
    }

    /// Patches per token `H x W`.
    pub fn patches_per_token(&self) -> usize {
        self.token_side * self.token_side
    }

    /// Token vector length `F x H x W`.
    pub fn token_dim(&self) -> usize {
        self.hidden * self.patches_per_token()
    }

    /// Side of the coarse per-patch output grid.
    pub fn patch_grid(&self) -> usize {
        self.token_grid * self.token_side
    }

    pub fn patch_inputs(&self) -> usize {
        self.in_channels * self.patch_side * self.patch_side
    }

    pub fn to_meta(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(format!("net.{k}"), v);
        };
        put("in_channels", self.in_channels.to_string());
        put("chip_side", self.chip_side.to_string());
        put("token_grid", self.token_grid.to_string());
        put("token_side", self.token_side.to_string());
        put("patch_side", self.patch_side.to_string());
        put("hidden", self.hidden.to_string());
        put("heads", self.heads.to_string());
        put("repeats", self.repeats.to_string());
        put("residual", self.residual.to_string());
        put("norm", self.norm.to_string());
        m
    }

    pub fn from_meta(meta: &BTreeMap<String, String>) -> Result<Self> {
        fn get<V: std::str::FromStr>(meta: &BTreeMap<String, String>, k: &str) -> Result<V> {
            meta.get(&format!("net.{k}"))
                .and_then(|v| v.parse().ok())
                .ok_or_else(|| Error::Config(format!("missing or invalid net.{k}")))
        }
        let cfg = Self {
            in_channels: get(meta, "in_channels")?,
            chip_side: get(meta, "chip_side")?,
            token_grid: get(meta, "token_grid")?,
            token_side: get(meta, "token_side")?,
            patch_side: get(meta, "patch_side")?,
            hidden: get(meta, "hidden")?,
            heads: get(meta, "heads")?,
            repeats: get(meta, "repeats")?,
            residual: get(meta, "residual")?,
            norm: get(meta, "norm")?,
        };
        cfg.validate()?;
        Ok(cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_is_valid() {
        let c = NetConfig::default();
        c.validate().unwrap();
        assert_eq!(c.tokens(), 16);
        assert_eq!(c.token_dim(), 256);
    }

    #[test]
    fn tiling_arithmetic() {
        let c = NetConfig { chip_side: 8, token_grid: 2, token_side: 2, patch_side: 2, hidden: 4, heads: 2, ..Default::default() };
        c.validate().unwrap();
        assert_eq!(c.tokens(), 4);
        assert_eq!(c.token_side, 2);
    }

    #[test]
    fn rejects_bad_configs() {
        let base = NetConfig::default();
        assert!(NetConfig { chip_side: 60, ..base.clone() }.validate().is_err());
        assert!(NetConfig { heads: 3, ..base.clone() }.validate().is_err());
        assert!(NetConfig { repeats: 0, ..base.clone() }.validate().is_err());
    }

    #[test]
    fn meta_round_trip() {
        let c = NetConfig { residual: false, ..Default::default() };
        assert_eq!(NetConfig::from_meta(&c.to_meta()).unwrap(), c);
    }
}
