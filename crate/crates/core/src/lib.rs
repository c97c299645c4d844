//! Bayesian high-resolution Transformer for sea ice concentration (SIC)
//! regression with uncertainty quantification.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`], [`tape`]: dense tensors and tape-based reverse-mode autodiff.
//! - [`net`]: the among-token / within-token attention network.
//! - [`variational`]: diagonal-Gaussian weight posteriors and the KL term.
//! - [`train`]: geographically weighted L1 training, dropout, epoch snapshots.
//! - [`uq`]: Bayesian sampling, MC dropout and epoch-ensemble predictors.
//! - [`synth`]: synthetic multi-sensor scenes with known truth.
//! - [`fusion`], [`eval`]: priority mosaics, per-class uncertainty tables and accuracy metrics.
//! - [`container`]: the `FLOW1` tensor container used for checkpoints and fields.

pub mod container;
pub mod error;
pub mod eval;
pub mod fusion;
pub mod net;
pub mod real;
pub mod seed;
pub mod synth;
pub mod tape;
pub mod tensor;
pub mod train;
pub mod uq;
pub mod variational;

pub use error::{Error, Result};
pub use real::Real;
pub use tape::{DropoutMode, Gradients, Tape, Var};
pub use tensor::Tensor;
