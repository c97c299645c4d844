use std::collections::BTreeMap;

use rand::Rng;

use crate::error::{Error, Result};
use crate::net::config::NetConfig;
use crate::real::Real;
use crate::seed;
use crate::tensor::Tensor;

/// Named parameter tensors, kept in sorted name order.
#[derive(Clone, Debug, PartialEq)]
pub struct ParamStore<T> {
    tensors: BTreeMap<String, Tensor<T>>,
}

impl<T: Real> Default for ParamStore<T> {
    fn default() -> Self {
        Self { tensors: BTreeMap::new() }
    }
}

impl<T: Real> ParamStore<T> {
    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<T>) {
        self.tensors.insert(name.into(), t);
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<T>> {
        self.tensors.get(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<T>> {
        self.tensors.get_mut(name).ok_or_else(|| Error::MissingParam(name.to_string()))
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<T>)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<T>)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.values().map(Tensor::len).sum()
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore { tensors: self.tensors.iter().map(|(k, v)| (k.clone(), v.cast())).collect() }
    }
}

/// Linear-projection parameters (weights and biases) as opposed to norm gains/shifts.
pub fn is_linear(name: &str) -> bool {
    name.ends_with(".weight") || name.ends_with(".bias")
}

pub fn linear_names(prefix: &str) -> (String, String) {
    (format!("{prefix}.weight"), format!("{prefix}.bias"))
}

pub fn stage_prefix(stage: usize, block: &str) -> String {
    format!("stage{stage}.{block}")
}

/// Parameter shapes of a network, in a fixed order.
pub fn param_shapes(cfg: &NetConfig) -> Vec<(String, Vec<usize>)> {
    let mut out = Vec::new();
    let linear = |prefix: String, fan_in: usize, fan_out: usize, out: &mut Vec<(String, Vec<usize>)>| {
        let (w, b) = linear_names(&prefix);
        out.push((w, vec![fan_in, fan_out]));
        out.push((b, vec![fan_out]));
    };
    linear("embed".into(), cfg.patch_inputs(), cfg.hidden, &mut out);
    for r in 0..cfg.repeats {
        for (block, dim) in [("glo", cfg.token_dim()), ("lo", cfg.hidden)] {
            let p = stage_prefix(r, block);
            if cfg.norm {
                out.push((format!("{p}.norm.gain"), vec![dim]));
                out.push((format!("{p}.norm.shift"), vec![dim]));
            }
            for proj in ["q", "k", "v", "o"] {
                linear(format!("{p}.{proj}"), dim, dim, &mut out);
            }
        }
    }
    linear("head".into(), cfg.repeats * cfg.hidden, 1, &mut out);
    out
}

/// Seeded initialization: uniform(+-1/sqrt(fan_in)) weights, zero biases,
/// unit gains, zero shifts.
pub fn init_params<T: Real>(cfg: &NetConfig, seed: u64) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let mut store = ParamStore::default();
    for (name, shape) in param_shapes(cfg) {
        let n: usize = shape.iter().product();
        let data: Vec<T> = if name.ends_with(".weight") {
            let bound = 1.0 / (shape[0] as f64).sqrt();
            let mut rng = seed::rng(seed, &name, 0);
            (0..n).map(|_| T::of(rng.random_range(-bound..bound))).collect()
        } else if name.ends_with(".gain") {
            vec![T::one(); n]
        } else {
            vec![T::zero(); n]
        };
        store.insert(name, Tensor::new(&shape, data)?);
    }
    Ok(store)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn init_is_seeded_and_complete() {
        let cfg = NetConfig::default();
        let a = init_params::<f32>(&cfg, 3).unwrap();
        let b = init_params::<f32>(&cfg, 3).unwrap();
        let c = init_params::<f32>(&cfg, 4).unwrap();
        assert_eq!(a, b);
        assert_ne!(a, c);
        assert_eq!(a.len(), param_shapes(&cfg).len());
        assert!(a.get("stage3.lo.o.weight").is_ok());
        assert!(a.get("stage4.lo.o.weight").is_err());
    }

    #[test]
    fn norm_params_omitted_when_disabled() {
        let cfg = NetConfig { norm: false, ..Default::default() };
        let p = init_params::<f64>(&cfg, 0).unwrap();
        assert!(p.names().all(|n| is_linear(n)));
    }
}
