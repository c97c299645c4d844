//! Diagonal-Gaussian variational posteriors over network weights.
//!
//! Each weight tensor `w` is replaced by a pair `(mu, rho)` with
//! `sigma = softplus(rho)`, sampled by reparameterization
//! `w = mu + sigma * eps`, `eps ~ N(0, I)`, against a standard-normal prior.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::net::model::{Bound, Model, ModelKind, Weights};
use crate::net::params::{is_linear, ParamStore};
use crate::net::BoundParams;
use crate::real::Real;
use crate::seed;
use crate::tape::{kl_term, softplus, Tape};
use crate::tensor::Tensor;

/// Posterior spread used when a deterministic network is bayesianized.
pub const SIGMA_INIT: f64 = 0.05;

pub const MU_SUFFIX: &str = ".mu";
pub const RHO_SUFFIX: &str = ".rho";

#[derive(Clone, Debug, PartialEq)]
pub struct VariationalParam<T> {
    pub mu: Tensor<T>,
    pub rho: Tensor<T>,
}

impl<T: Real> VariationalParam<T> {
    pub fn new(mu: Tensor<T>, rho: Tensor<T>) -> Result<Self> {
        if mu.shape() != rho.shape() {
            return Err(Error::Dimension { op: "variational", lhs: mu.shape().to_vec(), rhs: rho.shape().to_vec() });
        }
        Ok(Self { mu, rho })
    }

    /// Posterior with all spreads equal to `sigma`.
    pub fn with_sigma(mu: Tensor<T>, sigma: f64) -> Result<Self> {
        let rho = Tensor::full(mu.shape(), T::of(rho_for_sigma(sigma)));
        Self::new(mu, rho)
    }

    pub fn sigma(&self) -> Vec<T> {
        self.rho.data().iter().map(|&r| softplus(r)).collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct WeightSample<T> {
    pub epsilon: Vec<T>,
    pub w: Tensor<T>,
    pub seed: u64,
}

/// Model precision `tau` of the Gaussian likelihood. Stored and reported only;
/// the training objective is the weighted L1 loss.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Precision(f64);

impl Precision {
    pub fn new(tau: f64) -> Result<Self> {
        if tau.is_finite() && tau > 0.0 {
            Ok(Self(tau))
        } else {
            Err(Error::Config(format!("precision must be positive, got {tau}")))
        }
    }

    pub fn tau(self) -> f64 {
        self.0
    }
}

impl Default for Precision {
    fn default() -> Self {
        Self(1.0)
    }
}

/// Inverse softplus.
pub fn rho_for_sigma(sigma: f64) -> f64 {
    assert!(sigma > 0.0);
    if sigma > 20.0 {
        sigma
    } else {
        sigma.exp_m1().ln()
    }
}

/// Standard-normal draws from the stream `(seed, label)`.
pub fn epsilon<T: Real>(seed: u64, label: &str, n: usize) -> Vec<T> {
    let mut rng = seed::rng(seed, label, 0);
    (0..n).map(|_| T::of(rng.sample::<f64, _>(StandardNormal))).collect()
}

/// Reparameterized draw `w = mu + softplus(rho) * eps` for the stream `label`.
pub fn sample_named<T: Real>(vp: &VariationalParam<T>, seed: u64, label: &str) -> WeightSample<T> {
    let eps = epsilon::<T>(seed, label, vp.mu.len());
    let w: Vec<T> = vp
        .mu
        .data()
        .iter()
        .zip(vp.rho.data())
        .zip(&eps)
        .map(|((&m, &r), &e)| m + softplus(r) * e)
        .collect();
    let w = Tensor::new(vp.mu.shape(), w).expect("finite sample");
    WeightSample { epsilon: eps, w, seed }
}

pub fn sample<T: Real>(vp: &VariationalParam<T>, seed: u64) -> WeightSample<T> {
    sample_named(vp, seed, "weight")
}

/// `sum 1/2 (mu^2 + sigma^2 - ln sigma^2 - 1)`, always evaluated in f64.
pub fn kl_to_standard_normal<T: Real>(vp: &VariationalParam<T>) -> f64 {
    vp.mu.data().iter().zip(vp.rho.data()).map(|(&m, &r)| kl_term(m.f64(), r.f64())).sum()
}

/// Bayesian copy of a deterministic model: every linear weight and bias gets a
/// `(mu, rho)` pair with `mu` from the deterministic value and `sigma = sigma_init`.
/// Norm gains and shifts stay point estimates.
pub fn bayesianize_with<T: Real>(model: &Model<T>, sigma_init: f64) -> Result<Model<T>> {
    if model.kind == ModelKind::Bayesian {
        return Err(Error::MethodMismatch("model is already Bayesian".into()));
    }
    let mut store = ParamStore::default();
    for (name, t) in model.params.iter() {
        if is_linear(name) {
            let vp = VariationalParam::with_sigma(t.clone(), sigma_init)?;
            store.insert(format!("{name}{MU_SUFFIX}"), vp.mu);
            store.insert(format!("{name}{RHO_SUFFIX}"), vp.rho);
        } else {
            store.insert(name.clone(), t.clone());
        }
    }
    Ok(Model { kind: ModelKind::Bayesian, params: store, dropout_p: 0.0, ..model.clone() })
}

pub fn bayesianize<T: Real>(model: &Model<T>) -> Result<Model<T>> {
    bayesianize_with(model, SIGMA_INIT)
}

/// Iterates `(base name, posterior)` over the variational parameters of a store.
pub fn variational_params<T: Real>(store: &ParamStore<T>) -> Result<Vec<(String, VariationalParam<T>)>> {
    let mut out = Vec::new();
    for name in store.names() {
        if let Some(base) = name.strip_suffix(MU_SUFFIX) {
            let rho = store.get(&format!("{base}{RHO_SUFFIX}"))?;
            out.push((base.to_string(), VariationalParam::new(store.get(name)?.clone(), rho.clone())?));
        }
    }
    Ok(out)
}

/// Total KL of all variational parameters in a store.
pub fn total_kl<T: Real>(store: &ParamStore<T>) -> Result<f64> {
    Ok(variational_params(store)?.iter().map(|(_, vp)| kl_to_standard_normal(vp)).sum())
}

/// Records a Bayesian parameter set on the tape. With `Weights::Sample(seed)`
/// every tensor draws one `eps` shared by all its uses in the pass.
pub(crate) fn bind<T: Real>(tape: &mut Tape<T>, store: &ParamStore<T>, weights: Weights, trainable: bool) -> Result<Bound> {
    let mut params = BoundParams::default();
    let mut leaves = Vec::new();
    let mut kl = None;
    let leaf = |tape: &mut Tape<T>, t: &Tensor<T>| if trainable { tape.param(t.clone()) } else { tape.constant(t.clone()) };
    for (name, t) in store.iter() {
        if name.ends_with(MU_SUFFIX) || name.ends_with(RHO_SUFFIX) {
            continue;
        }
        let v = leaf(tape, t);
        leaves.push((name.clone(), v));
        params.insert(name.clone(), v);
    }
    for (base, vp) in variational_params(store)? {
        let mu = leaf(tape, &vp.mu);
        let w = match weights {
            Weights::Mean => {
                if trainable {
                    let rho = leaf(tape, &vp.rho);
                    leaves.push((format!("{base}{RHO_SUFFIX}"), rho));
                    let part = tape.kl_std_normal(mu, rho)?;
                    kl = Some(match kl {
                        Some(acc) => tape.add(acc, part)?,
                        None => part,
                    });
                }
                mu
            }
            Weights::Sample(seed) => {
                let rho = leaf(tape, &vp.rho);
                if trainable {
                    leaves.push((format!("{base}{RHO_SUFFIX}"), rho));
                    let part = tape.kl_std_normal(mu, rho)?;
                    kl = Some(match kl {
                        Some(acc) => tape.add(acc, part)?,
                        None => part,
                    });
                }
                let sigma = tape.softplus(rho)?;
                let noise = tape.mul_const(sigma, epsilon(seed, &base, vp.mu.len()))?;
                tape.add(mu, noise)?
            }
        };
        leaves.push((format!("{base}{MU_SUFFIX}"), mu));
        params.insert(base, w);
    }
    Ok(Bound { params, leaves, kl })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_vp(mu: f64, sigma: f64) -> VariationalParam<f64> {
        VariationalParam::with_sigma(Tensor::from_f64(&[1], &[mu]).unwrap(), sigma).unwrap()
    }

    #[test]
    fn degenerate_posterior_returns_mean() {
        let mu = Tensor::<f64>::from_f64(&[3], &[0.3, -1.2, 4.0]).unwrap();
        let vp = VariationalParam::new(mu.clone(), Tensor::full(&[3], -20.0)).unwrap();
        let s = sample(&vp, 11);
        for (w, m) in s.w.data().iter().zip(mu.data()) {
            assert!((w - m).abs() < 1e-7);
        }
    }

    #[test]
    fn same_seed_is_bitwise_identical() {
        let vp = scalar_vp(0.5, 0.1);
        assert_eq!(sample(&vp, 42), sample(&vp, 42));
        assert_ne!(sample(&vp, 42).w, sample(&vp, 43).w);
    }

    #[test]
    fn kl_closed_form_examples() {
        assert!(kl_to_standard_normal(&scalar_vp(0.0, 1.0)).abs() < 1e-12);
        assert!((kl_to_standard_normal(&scalar_vp(1.0, 1.0)) - 0.5).abs() < 1e-12);
        // 1/2 (0.25 - ln 0.25 - 1)
        let expected = 0.5 * (0.25 - 0.25f64.ln() - 1.0);
        assert!((kl_to_standard_normal(&scalar_vp(0.0, 0.5)) - expected).abs() < 1e-12);
        assert!((expected - 0.318_147_180_559_945_3).abs() < 1e-12);
    }

    #[test]
    fn precision_must_be_positive() {
        assert!(Precision::new(0.0).is_err());
        assert!(Precision::new(-1.0).is_err());
        assert_eq!(Precision::new(2.5).unwrap().tau(), 2.5);
    }

    #[test]
    fn rho_inverts_softplus() {
        for s in [1e-3, 0.05, 1.0, 3.0] {
            assert!((softplus(rho_for_sigma(s)) - s).abs() < 1e-12 * s.max(1.0));
        }
    }
}
