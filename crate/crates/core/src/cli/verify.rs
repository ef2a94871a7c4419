//! Numerical self-checks run by `fmf verify`.

use rand::Rng;

use super::config::{Prepared, RunConfig};
use crate::cond_path::{cond_flow, cond_velocity, interpolant, u_to_x1, x1_to_u};
use crate::container::Checkpoint;
use crate::error::Result;
use crate::function_space::{norm_sq, relative_l2, FunctionSample};
use crate::operator::{DifferentiableField, Field, OperatorParams, Query, TangentTriple};
use crate::oracle::{Oracle, ReferenceMetric};
use crate::rng::{derive_seed, rng_from_seed};
use crate::training::{u_target, x1_target, Objective};

/// How a check compares its value with the threshold.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Bound {
    Below,
    Above,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub value: f64,
    pub threshold: f64,
    pub bound: Bound,
    /// Set when the check does not apply to this configuration.
    pub skipped: Option<String>,
}

impl Check {
    fn below(name: &'static str, value: f64, threshold: f64) -> Self {
        Self { name, value, threshold, bound: Bound::Below, skipped: None }
    }

    fn above(name: &'static str, value: f64, threshold: f64) -> Self {
        Self { name, value, threshold, bound: Bound::Above, skipped: None }
    }

    fn skip(name: &'static str, why: impl Into<String>) -> Self {
        Self {
            name,
            value: f64::NAN,
            threshold: f64::NAN,
            bound: Bound::Below,
            skipped: Some(why.into()),
        }
    }

    pub fn passed(&self) -> bool {
        self.skipped.is_some()
            || match self.bound {
                Bound::Below => self.value < self.threshold,
                Bound::Above => self.value > self.threshold,
            }
    }

    pub fn status(&self) -> &'static str {
        match (&self.skipped, self.passed()) {
            (Some(_), _) => "skip",
            (None, true) => "pass",
            (None, false) => "fail",
        }
    }
}

fn max_diff(a: &FunctionSample, b: &FunctionSample) -> Result<f64> {
    a.max_abs_diff(b)
}

fn probe_pair(cfg: &RunConfig, p: &Prepared, salt: u64) -> Result<(FunctionSample, FunctionSample)> {
    let f0 = p.noise.sample(derive_seed(cfg.seed, salt, 0), p.data.channels());
    Ok((f0, p.data.atoms()[0].clone()))
}

fn path_identities(cfg: &RunConfig, p: &Prepared) -> Result<Check> {
    let path = cfg.path_params();
    let (f0, f) = probe_pair(cfg, p, 11)?;
    let mut worst: f64 = 0.0;
    worst = worst.max(max_diff(&interpolant(&f0, &f, 0.0, path)?, &f0)?);
    let end = f0.lin_comb(path.sigma_min, &f, 1.0)?;
    worst = worst.max(max_diff(&interpolant(&f0, &f, 1.0, path)?, &end)?);
    let h = 1e-6;
    for &t in &[0.1, 0.4, 0.7] {
        let g = interpolant(&f0, &f, t, path)?;
        // velocity is the time derivative of the path
        let fd = interpolant(&f0, &f, t + h, path)?
            .lin_comb(0.5 / h, &interpolant(&f0, &f, t - h, path)?, -0.5 / h)?;
        let u = cond_velocity(&g, &f, t, path)?;
        let scale = 1.0 + u.values().iter().fold(0.0f64, |m, v| m.max(v.abs()));
        worst = worst.max(max_diff(&u, &fd)? / scale);
        // flows compose along the path
        let r = t + 0.2;
        worst = worst.max(max_diff(&cond_flow(&g, &f, t, r, path)?, &interpolant(&f0, &f, r, path)?)?);
        // endpoint and velocity parameterizations invert each other
        worst = worst.max(max_diff(&x1_to_u(&u_to_x1(&u, &g, t)?, &g, t)?, &u)?);
    }
    Ok(Check::below("path_identities", worst, 1e-8))
}

fn target_reduction(cfg: &RunConfig, p: &Prepared, params: &OperatorParams) -> Result<Check> {
    let path = cfg.path_params();
    let model = p.net.bind(params);
    let (f0, f) = probe_pair(cfg, p, 12)?;
    let t = 0.35;
    let g = interpolant(&f0, &f, t, path)?;
    let v = cond_velocity(&g, &f, t, path)?;
    let (_, ut) = u_target(&model, &g, &v, t, t)?;
    let (_, xt) = x1_target(&model, &g, &f, t, t, cfg.train.r_clip_eps)?;
    let worst = max_diff(&ut, &v)?.max(max_diff(&xt, &f)?);
    Ok(Check::below("target_reduction", worst, 1e-12))
}

fn jvp_fd(cfg: &RunConfig, p: &Prepared, params: &OperatorParams) -> Result<Check> {
    let model = p.net.bind(params);
    let (g, f) = probe_pair(cfg, p, 13)?;
    let tangent = TangentTriple { dg: f.sub(&g)?, dt: 0.7, dr: -0.3 };
    let (t, r) = (0.3, 0.6);
    let (_, dir) = model.jvp(&g, t, r, &tangent)?;
    let h = 1e-5;
    let shifted = |s: f64| -> Result<FunctionSample> {
        model.eval(&g.lin_comb(1.0, &tangent.dg, s)?, t + s * tangent.dt, r + s * tangent.dr)
    };
    let fd = shifted(h)?.lin_comb(0.5 / h, &shifted(-h)?, -0.5 / h)?;
    Ok(Check::below("jvp_fd", relative_l2(&dir, &fd)?, 1e-5))
}

fn param_grad_fd(cfg: &RunConfig, p: &Prepared, params: &OperatorParams) -> Result<Check> {
    let path = cfg.path_params();
    let (f0, f) = probe_pair(cfg, p, 14)?;
    let queries = [(0.2, 0.5), (0.6, 0.6)]
        .iter()
        .map(|&(t, r)| Ok(Query { g: interpolant(&f0, &f, t, path)?, t, r }))
        .collect::<Result<Vec<_>>>()?;
    let target = f.clone();
    let loss = |outs: &[FunctionSample]| -> Result<(f64, Vec<FunctionSample>)> {
        let mut total = 0.0;
        let mut grads = Vec::with_capacity(outs.len());
        for y in outs {
            let e = y.sub(&target)?;
            let n = e.values().len() as f64;
            total += e.values().iter().map(|v| v * v).sum::<f64>() / n;
            grads.push(e.scale(2.0 / n));
        }
        Ok((total, grads))
    };
    let (_, grad) = p.net.param_gradient(params, &queries, &loss)?;
    let max = grad.iter().fold(0.0f64, |m, g| m.max(g.abs()));
    let eligible: Vec<usize> = (0..grad.len()).filter(|&i| grad[i].abs() > 1e-3 * max).collect();
    let mut rng = rng_from_seed(derive_seed(cfg.seed, 15, 0));
    let mut worst: f64 = 0.0;
    let mut probe = params.clone();
    for _ in 0..20.min(eligible.len()) {
        let i = eligible[rng.random_range(0..eligible.len())];
        let h = 1e-6 * (1.0 + params.values()[i].abs());
        let orig = params.values()[i];
        probe.values_mut()[i] = orig + h;
        let (lp, _) = loss(&outputs(p, &probe, &queries)?)?;
        probe.values_mut()[i] = orig - h;
        let (lm, _) = loss(&outputs(p, &probe, &queries)?)?;
        probe.values_mut()[i] = orig;
        let fd = (lp - lm) / (2.0 * h);
        worst = worst.max((fd - grad[i]).abs() / grad[i].abs());
    }
    Ok(Check::below("param_grad_fd", worst, 1e-4))
}

fn outputs(p: &Prepared, params: &OperatorParams, qs: &[Query]) -> Result<Vec<FunctionSample>> {
    qs.iter().map(|q| p.net.forward(params, &q.g, q.t, q.r)).collect()
}

/// A noisy state early on the path, where the posterior is still mixed.
fn mixed_state(cfg: &RunConfig, p: &Prepared, t: f64) -> Result<FunctionSample> {
    let (f0, f) = probe_pair(cfg, p, 17)?;
    interpolant(&f0, &f, t, cfg.path_params())
}

fn two_atom_oracle(cfg: &RunConfig, p: &Prepared) -> Result<Option<Oracle>> {
    if p.data.len() < 2 {
        return Ok(None);
    }
    let data = crate::datasets::AtomDataset::uniform(p.data.atoms()[..2].to_vec())?;
    Oracle::new(data, cfg.path_params(), ReferenceMetric::default()).map(Some)
}

fn flow_mismatch(cfg: &RunConfig, p: &Prepared) -> Result<Check> {
    let Some(oracle) = two_atom_oracle(cfg, p)? else {
        return Ok(Check::skip("flow_mismatch", "needs at least two atoms"));
    };
    let (t, r) = (0.2, 0.8);
    let g = mixed_state(cfg, p, t)?;
    let coarse = oracle.flow(&g, t, r, oracle.ode_steps())?;
    let fine = oracle.flow(&g, t, r, 2 * oracle.ode_steps())?;
    let ode_tol = norm_sq(&coarse.sub(&fine)?).sqrt().max(1e-12);
    Ok(Check::above("flow_mismatch", oracle.flow_mismatch(&g, t, r)?, 10.0 * ode_tol))
}

fn mean_velocity_identity(cfg: &RunConfig, p: &Prepared) -> Result<Check> {
    let Some(oracle) = two_atom_oracle(cfg, p)? else {
        return Ok(Check::skip("mean_velocity_identity", "needs at least two atoms"));
    };
    let (t, r, h) = (0.3, 0.7, 1e-3);
    let g = mixed_state(cfg, p, t)?;
    let u = oracle.mean_velocity(&g, t, r)?;
    let v = oracle.marginal_velocity(&g, t)?;
    // total derivative of u along the trajectory through g
    let ahead = oracle.mean_velocity(&oracle.flow(&g, t, t + h, 16)?, t + h, r)?;
    let behind = oracle.mean_velocity(&oracle.flow(&g, t, t - h, 16)?, t - h, r)?;
    let du = ahead.lin_comb(0.5 / h, &behind, -0.5 / h)?;
    let rhs = v.lin_comb(1.0, &du, r - t)?;
    Ok(Check::below("mean_velocity_identity", relative_l2(&rhs, &u)?, 1e-3))
}

/// Mean relative L2 distance between a trained model and the exact oracle.
pub fn oracle_gap(cfg: &RunConfig, p: &Prepared, ckpt: &Checkpoint) -> Result<f64> {
    let path = cfg.path_params();
    let oracle = Oracle::new(p.data.clone(), path, ReferenceMetric::for_noise(&p.grid, &cfg.noise)?)?;
    let model = p.net.bind(&ckpt.params);
    let objective = cfg.train.objective;
    let mut total = 0.0;
    for i in 0..cfg.verify.probes {
        let mut rng = rng_from_seed(derive_seed(cfg.seed, 16, i as u64));
        let t: f64 = rng.random_range(0.0..0.85);
        let r = match objective {
            Objective::FfmBaseline => t,
            _ => rng.random_range(t + 0.05..=0.95),
        };
        let f0 = p.noise.sample_with(&mut rng, p.data.channels());
        let f = &p.data.atoms()[p.data.sample_index(&mut rng)];
        let g = interpolant(&f0, f, t, path)?;
        let exact = match objective {
            Objective::FfmBaseline => oracle.marginal_velocity(&g, t)?,
            Objective::FmfU => oracle.mean_velocity(&g, t, r)?,
            Objective::FmfX1 => u_to_x1(&oracle.mean_velocity(&g, t, r)?, &g, t)?,
        };
        total += relative_l2(&model.eval(&g, t, r)?, &exact)?;
    }
    Ok(total / cfg.verify.probes as f64)
}

/// Runs every check; `ckpt` adds the trained-model comparison.
pub fn run_checks(cfg: &RunConfig, ckpt: Option<&Checkpoint>) -> Result<Vec<Check>> {
    let p = cfg.prepare()?;
    let params = match ckpt {
        Some(c) => c.params.clone(),
        None => p.net.init_params(derive_seed(cfg.train.init_seed.unwrap_or(cfg.seed), 2, 0)),
    };
    let mut checks = vec![
        path_identities(cfg, &p)?,
        target_reduction(cfg, &p, &params)?,
        jvp_fd(cfg, &p, &params)?,
        param_grad_fd(cfg, &p, &params)?,
        flow_mismatch(cfg, &p)?,
        mean_velocity_identity(cfg, &p)?,
    ];
    checks.push(match ckpt {
        Some(c) => Check::below("oracle_equivalence", oracle_gap(cfg, &p, c)?, cfg.verify.oracle_tolerance),
        None => Check::skip("oracle_equivalence", "no checkpoint given"),
    });
    Ok(checks)
}
