//! Closed-form conditional paths of the Gaussian flow-matching family.
//!
//! Conditioned on a target `f`, noise `f0` travels along
//! `g_t = (1 - (1 - sigma_min) t) f0 + t f`, with conditional velocity
//! `u_t^f(g) = (1 - sigma_min) / sigma_t * (t f - g) + f` and conditional
//! endpoint `f1_t^f(g) = sigma_min / sigma_t * (g - t f) + f`, where
//! `sigma_t = 1 - (1 - sigma_min) t`.

use serde::{Deserialize, Serialize};

use crate::error::{FmfError, Result};
use crate::function_space::FunctionSample;

/// Parameters of the conditional path family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PathParams {
    pub sigma_min: f64,
}

impl PathParams {
    pub fn new(sigma_min: f64) -> Result<Self> {
        let p = Self { sigma_min };
        p.validate()?;
        Ok(p)
    }

    pub fn validate(&self) -> Result<()> {
        if !(0.0..1.0).contains(&self.sigma_min) {
            return Err(FmfError::param(format!(
                "sigma_min must lie in [0, 1), got {}",
                self.sigma_min
            )));
        }
        Ok(())
    }

    /// Conditional standard deviation `sigma_t = 1 - (1 - sigma_min) t`.
    pub fn sigma_t(&self, t: f64) -> f64 {
        1.0 - (1.0 - self.sigma_min) * t
    }

    fn checked_sigma_t(&self, t: f64) -> Result<f64> {
        let s = self.sigma_t(t);
        if s <= 0.0 {
            return Err(FmfError::SingularTime(format!(
                "sigma_t vanishes at t = {t} with sigma_min = {}",
                self.sigma_min
            )));
        }
        Ok(s)
    }
}

impl Default for PathParams {
    fn default() -> Self {
        Self { sigma_min: 0.0 }
    }
}

/// Ordered time pair `0 <= t <= r <= 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimePair {
    pub t: f64,
    pub r: f64,
}

impl TimePair {
    pub fn new(t: f64, r: f64) -> Result<Self> {
        if !(0.0 <= t && t <= r && r <= 1.0) {
            return Err(FmfError::param(format!(
                "time pair must satisfy 0 <= t <= r <= 1, got t={t}, r={r}"
            )));
        }
        Ok(Self { t, r })
    }
}

fn check_time(t: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&t) {
        return Err(FmfError::param(format!("time must lie in [0, 1], got {t}")));
    }
    Ok(())
}

/// `g = sigma_t f0 + t f`.
pub fn interpolant(
    f0: &FunctionSample,
    f: &FunctionSample,
    t: f64,
    p: PathParams,
) -> Result<FunctionSample> {
    check_time(t)?;
    f0.lin_comb(p.sigma_t(t), f, t)
}

/// Conditional velocity `u_t^f(g)`.
pub fn cond_velocity(
    g: &FunctionSample,
    f: &FunctionSample,
    t: f64,
    p: PathParams,
) -> Result<FunctionSample> {
    check_time(t)?;
    let s = p.checked_sigma_t(t)?;
    let k = (1.0 - p.sigma_min) / s;
    // k (t f - g) + f
    f.lin_comb(k * t + 1.0, g, -k)
}

/// Conditional endpoint target `f1_t^f(g)`.
pub fn cond_x1_target(
    g: &FunctionSample,
    f: &FunctionSample,
    t: f64,
    p: PathParams,
) -> Result<FunctionSample> {
    check_time(t)?;
    let s = p.checked_sigma_t(t)?;
    let k = p.sigma_min / s;
    // k (g - t f) + f
    g.lin_comb(k, f, 1.0 - k * t)
}

/// Endpoint extrapolated from a velocity: `x1 = (1 - t) u + g`.
pub fn u_to_x1(u: &FunctionSample, g: &FunctionSample, t: f64) -> Result<FunctionSample> {
    u.lin_comb(1.0 - t, g, 1.0)
}

/// Velocity recovered from an endpoint: `u = (x1 - g) / (1 - t)`.
pub fn x1_to_u(x1: &FunctionSample, g: &FunctionSample, t: f64) -> Result<FunctionSample> {
    if t >= 1.0 {
        return Err(FmfError::SingularTime(format!(
            "cannot recover a velocity from an endpoint at t = {t}"
        )));
    }
    let k = 1.0 / (1.0 - t);
    x1.lin_comb(k, g, -k)
}

/// Conditional two-parameter flow `phi_r^f((phi_t^f)^{-1}(g))`.
pub fn cond_flow(
    g: &FunctionSample,
    f: &FunctionSample,
    t: f64,
    r: f64,
    p: PathParams,
) -> Result<FunctionSample> {
    check_time(t)?;
    check_time(r)?;
    let st = p.checked_sigma_t(t)?;
    let sr = p.sigma_t(r);
    // f0 = (g - t f) / st ; result = sr f0 + r f
    let a = sr / st;
    g.lin_comb(a, f, r - a * t)
}
