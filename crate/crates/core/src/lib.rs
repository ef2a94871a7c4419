//! Functional mean flows: one-step generative modeling of functions.
//!
//! The crate is organized bottom-up:
//!
//! - [`function_space`]: grids, discretized functions, Gaussian noise
//!   samplers and spectral smoothing.
//! - [`cond_path`]: closed-form conditional paths, velocities and endpoint
//!   targets.
//! - [`operator`]: a small spectral neural operator conditioned on `(t, r)`
//!   with exact forward-mode directional derivatives and parameter gradients.
//! - [`training`]: time-pair sampling, mean-flow regression targets and the
//!   training loop.
//! - [`sampler`]: one-step, few-step and Euler generation.
//! - [`oracle`]: exact marginal and mean velocities for finite-atom datasets.
//! - [`metrics`]: statistical functionals, density, spectrum and
//!   variance-collapse metrics.
//! - [`cli`]: config-driven commands behind the `fmf` binary.

pub mod cli;
pub mod cond_path;
pub mod container;
pub mod datasets;
pub mod error;
pub mod function_space;
pub mod metrics;
pub mod operator;
pub mod oracle;
pub mod rng;
pub mod sampler;
pub mod training;

pub use error::{FmfError, Result};
pub use function_space::{inner_product, norm_sq, FunctionSample, Grid, NoiseSpec};
