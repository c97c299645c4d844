use std::path::Path;

use crate::container::{Container, NamedTensor};
use crate::error::{Error, Result};
use crate::net::config::NetConfig;
use crate::net::params::{init_params, ParamStore};
use crate::net::{forward, BoundParams, DropoutPlan};
use crate::real::Real;
use crate::tape::Tape;
use crate::tensor::Tensor;
use crate::variational::{self, Precision};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ModelKind {
    Deterministic,
    Bayesian,
    /// Deterministic weights trained (and optionally sampled) with dropout.
    Dropout,
}

impl ModelKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ModelKind::Deterministic => "deterministic",
            ModelKind::Bayesian => "bayesian",
            ModelKind::Dropout => "dropout",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "deterministic" => Ok(ModelKind::Deterministic),
            "bayesian" => Ok(ModelKind::Bayesian),
            "dropout" => Ok(ModelKind::Dropout),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Which weights a Bayesian model uses for a pass.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Weights {
    /// Posterior means (the only option for non-Bayesian models).
    Mean,
    /// One reparameterized draw per tensor, keyed by the seed.
    Sample(u64),
}

/// A parameter set recorded on a tape.
#[derive(Debug)]
pub struct Bound {
    pub params: BoundParams,
    /// Trainable leaves by stored parameter name.
    pub leaves: Vec<(String, crate::tape::Var)>,
    /// Total KL to the prior; only for trainable Bayesian binds.
    pub kl: Option<crate::tape::Var>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Model<T> {
    pub config: NetConfig,
    pub kind: ModelKind,
    /// Dropout probability used in training and stochastic inference.
    pub dropout_p: f64,
    pub precision: Precision,
    pub params: ParamStore<T>,
}

impl<T: Real> Model<T> {
    pub fn deterministic(config: NetConfig, seed: u64) -> Result<Self> {
        let params = init_params(&config, seed)?;
        Ok(Self { config, kind: ModelKind::Deterministic, dropout_p: 0.0, precision: Precision::default(), params })
    }

    pub fn with_dropout(config: NetConfig, seed: u64, p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::Config(format!("dropout probability {p} outside [0, 1)")));
        }
        Ok(Self { kind: ModelKind::Dropout, dropout_p: p, ..Self::deterministic(config, seed)? })
    }

    pub fn bayesian(config: NetConfig, seed: u64) -> Result<Self> {
        variational::bayesianize(&Self::deterministic(config, seed)?)
    }

    /// Builds a model of the requested kind from a common seed.
    pub fn init(kind: ModelKind, config: NetConfig, seed: u64, dropout_p: f64) -> Result<Self> {
        match kind {
            ModelKind::Deterministic => Self::deterministic(config, seed),
            ModelKind::Dropout => Self::with_dropout(config, seed, dropout_p),
            ModelKind::Bayesian => Self::bayesian(config, seed),
        }
    }

    pub fn bind(&self, tape: &mut Tape<T>, weights: Weights, trainable: bool) -> Result<Bound> {
        if self.kind == ModelKind::Bayesian {
            return variational::bind(tape, &self.params, weights, trainable);
        }
        if let Weights::Sample(_) = weights {
            return Err(Error::MethodMismatch(format!("weight sampling requested on a {} model", self.kind.as_str())));
        }
        let mut params = BoundParams::default();
        let mut leaves = Vec::new();
        for (name, t) in self.params.iter() {
            let v = if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
            params.insert(name.clone(), v);
            leaves.push((name.clone(), v));
        }
        Ok(Bound { params, leaves, kl: None })
    }

    /// Forward pass on a chip batch `(B, C, H0, W0)`, returning `(B, 1, H0, W0)` SIC.
    pub fn predict(&self, chips: &Tensor<T>, weights: Weights, dropout: &DropoutPlan) -> Result<Tensor<T>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, weights, false)?;
        let x = tape.constant(chips.clone());
        let out = forward(&mut tape, x, &self.config, &bound.params, dropout)?;
        Ok(tape.value(out.sic).clone())
    }

    /// Deterministic model holding the posterior means (identity for non-Bayesian models).
    pub fn mean_model(&self) -> Result<Self> {
        if self.kind != ModelKind::Bayesian {
            return Ok(self.clone());
        }
        let mut store = ParamStore::default();
        for (name, t) in self.params.iter() {
            if let Some(base) = name.strip_suffix(variational::MU_SUFFIX) {
                store.insert(base, t.clone());
            } else if !name.ends_with(variational::RHO_SUFFIX) {
                store.insert(name.clone(), t.clone());
            }
        }
        Ok(Self { kind: ModelKind::Deterministic, params: store, ..self.clone() })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            kind: self.kind,
            dropout_p: self.dropout_p,
            precision: self.precision,
            params: self.params.cast(),
        }
    }

    pub fn to_container(&self) -> Container {
        let mut meta = self.config.to_meta();
        meta.insert("kind".into(), self.kind.as_str().into());
        meta.insert("dropout_p".into(), self.dropout_p.to_string());
        meta.insert("precision_tau".into(), self.precision.tau().to_string());
        meta.insert("content".into(), "model".into());
        let tensors = self.params.iter().map(|(n, t)| NamedTensor::from_tensor(n.clone(), t)).collect();
        Container { meta, tensors }
    }

    pub fn from_container(c: &Container, path: &Path) -> Result<Self> {
        let malformed = |detail: String| Error::Malformed { path: path.to_path_buf(), detail };
        if c.meta_get("content") != Some("model") {
            return Err(malformed("not a model checkpoint".into()));
        }
        let config = NetConfig::from_meta(&c.meta)?;
        let kind: ModelKind = c.meta_get("kind").ok_or_else(|| malformed("missing kind".into()))?.parse()?;
        let dropout_p = c.meta_get("dropout_p").and_then(|v| v.parse().ok()).ok_or_else(|| malformed("dropout_p".into()))?;
        let tau = c.meta_get("precision_tau").and_then(|v| v.parse().ok()).ok_or_else(|| malformed("precision_tau".into()))?;
        let mut params = ParamStore::default();
        for t in &c.tensors {
            params.insert(t.name.clone(), t.to_tensor()?);
        }
        let model = Self { config, kind, dropout_p, precision: Precision::new(tau)?, params };
        model.check_complete().map_err(|e| Error::FormatDimension { path: path.to_path_buf(), detail: e.to_string() })?;
        Ok(model)
    }

    /// Verifies every parameter the config needs is present with the right shape.
    pub fn check_complete(&self) -> Result<()> {
        for (name, shape) in crate::net::params::param_shapes(&self.config) {
            let names: Vec<String> = if self.kind == ModelKind::Bayesian && crate::net::params::is_linear(&name) {
                vec![format!("{name}{}", variational::MU_SUFFIX), format!("{name}{}", variational::RHO_SUFFIX)]
            } else {
                vec![name]
            };
            for n in names {
                let t = self.params.get(&n)?;
                if t.shape() != shape.as_slice() {
                    return Err(Error::Dimension { op: "checkpoint", lhs: t.shape().to_vec(), rhs: shape.clone() });
                }
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().write(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::read(path)?, path)
    }
}
