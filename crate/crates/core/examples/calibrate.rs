//! Trains the oracle-equivalence setup and prints the oracle gap as training
//! progresses. Used to freeze the thresholds in `tests/acceptance.rs`.
//!
//! `cargo run --release --example calibrate -- [objective] [steps] [hidden] [seed]`

use std::time::Instant;

use fmf::cond_path::{interpolant, PathParams};
use fmf::datasets::gp_mixture;
use fmf::function_space::{relative_l2, Grid, NoiseSampler, NoiseSpec};
use fmf::operator::{Field, NeuralOperator, OperatorConfig};
use fmf::oracle::{Oracle, ReferenceMetric};
use fmf::metrics::stats_mse;
use fmf::rng::{derive_seed, rng_from_seed};
use fmf::sampler::{generate, SampleMode, SampleRequest};
use fmf::training::{train_with, Objective, TimeSamplerSpec, TrainConfig};
use rand::Rng;

fn main() -> fmf::Result<()> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let objective = match args.first().map(String::as_str) {
        Some("ffm") => Objective::FfmBaseline,
        _ => Objective::FmfU,
    };
    let steps: usize = args.get(1).and_then(|s| s.parse().ok()).unwrap_or(5000);
    let hidden: usize = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(32);
    let seed: u64 = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(0);

    let env = |k: &str, d: f64| std::env::var(k).ok().and_then(|v| v.parse().ok()).unwrap_or(d);
    let grid = Grid::line(32)?;
    let data = gp_mixture(&grid, 2, env("ATOM_LEN", 0.2), 1.0, env("ATOM_NU", 1.5), 0)?;
    let noise_spec = NoiseSpec::Matern {
        matern_length: env("NOISE_LEN", 0.1),
        matern_variance: 1.0,
        matern_nu: env("NOISE_NU", 1.5),
    };
    let noise = NoiseSampler::new(&grid, &noise_spec)?;
    let path = PathParams::default();
    let oracle = Oracle::new(data.clone(), path, ReferenceMetric::for_noise(&grid, &noise_spec)?)?;
    let net = NeuralOperator::new(
        OperatorConfig {
            hidden_channels: hidden,
            projection_channels: hidden,
            modes: vec![16],
            layers: 4,
            time_scale: 1.0,
            ..OperatorConfig::default()
        },
        &grid,
    )?;
    let cfg = TrainConfig {
        objective,
        time_sampler: TimeSamplerSpec::logit_normal(env("TS_MU", -0.4), env("TS_SIGMA", 1.0), env("P_EQUAL", 0.25)),
        steps,
        seed,
        batch_size: env("BATCH", 16.0) as usize,
        learning_rate: env("LR", 1e-3),
        lr_milestones: vec![
            (steps as f64 * env("M1", 0.6)) as usize,
            (steps as f64 * env("M2", 0.9)) as usize,
        ],
        ..TrainConfig::default()
    }
    .normalized();

    let probes: Vec<_> = (0..40)
        .map(|i| {
            let mut rng = rng_from_seed(derive_seed(1000 + seed + i / 10, 16, i % 10));
            let t: f64 = rng.random_range(0.0..0.85);
            let r = if objective == Objective::FfmBaseline { t } else { rng.random_range(t + 0.05..=0.95) };
            let f0 = noise.sample_with(&mut rng, 1);
            let f = &data.atoms()[data.sample_index(&mut rng)];
            let g = interpolant(&f0, f, t, path).unwrap();
            let exact = oracle.mean_field().eval(&g, t, r).unwrap();
            if std::env::var("DIAG").is_ok() {
                let w = oracle.mixture_weights(&g, t).unwrap();
                let end = oracle.flow(&g, t, 1.0 - 1e-3, 256).unwrap();
                let d: Vec<f64> = data.atoms().iter().map(|a| fmf::norm_sq(&end.sub(a).unwrap()).sqrt()).collect();
                println!("probe {i}: t {t:.3} r {r:.3} rho0 {:.3} end-dist {d:.3?} |u| {:.3}", w.0[0], fmf::norm_sq(&exact).sqrt());
            }
            (g, t, r, exact)
        })
        .collect();

    let start = Instant::now();
    let mut snapshots = Vec::new();
    let report = (steps / 10).max(1);
    let out = train_with(&net, net.init_params(derive_seed(seed, 2, 0)), &cfg, &data, &noise, |rec| {
        if (rec.step + 1) % report == 0 {
            snapshots.push((rec.step + 1, rec.loss, start.elapsed().as_secs_f64()));
        }
    })?;
    for (s, l, secs) in &snapshots {
        println!("step {s:>6} loss {l:.4e} elapsed {secs:.1}s");
    }
    let model = net.bind(&out.params);
    let gaps: Vec<f64> = probes
        .iter()
        .map(|(g, t, r, exact)| relative_l2(&model.eval(g, *t, *r).unwrap(), exact).unwrap())
        .collect();
    for set in gaps.chunks(10) {
        let mean = set.iter().sum::<f64>() / set.len() as f64;
        let max = set.iter().cloned().fold(0.0, f64::max);
        println!("oracle gap mean {mean:.4} max {max:.4} per-probe {set:.3?}");
    }
    // generation quality on streams disjoint from the acceptance ones
    let (mode, steps) = match objective {
        Objective::FfmBaseline => (SampleMode::EulerBaseline, 64),
        _ => (SampleMode::OneStepU, 1),
    };
    let req = SampleRequest { count: 512, grid: grid.clone(), noise: noise_spec.clone(), mode, steps, seed: 2000 + seed, sharpen_eps: None };
    let generated = generate(&model, &req, 1)?;
    let mut rng = rng_from_seed(2001 + seed);
    let reference: Vec<_> = (0..512).map(|_| data.atoms()[data.sample_index(&mut rng)].clone()).collect();
    let st = stats_mse(&generated.samples, &reference)?;
    println!("generation {mode} mean {:.3e} variance {:.3e}", st.mean, st.variance);
    Ok(())
}
