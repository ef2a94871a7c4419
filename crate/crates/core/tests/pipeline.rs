//! The exact two-atom field driven through the public sampler and metrics.

use fmf::cond_path::PathParams;
use fmf::datasets::{gp_mixture, AtomDataset};
use fmf::function_space::{norm_sq, Grid, NoiseSampler, NoiseSpec};
use fmf::metrics::stats_mse;
use fmf::oracle::{Oracle, ReferenceMetric};
use fmf::rng::rng_from_seed;
use fmf::sampler::{few_step_u, generate, one_step_u, SampleMode, SampleRequest};
use fmf::FunctionSample;

const COUNT: usize = 200;

fn setup() -> (Grid, NoiseSpec, Oracle) {
    let grid = Grid::line(32).unwrap();
    let noise = NoiseSpec::matern(0.1, 1.0);
    let data = gp_mixture(&grid, 2, 0.2, 1.0, 1.5, 0).unwrap();
    let metric = ReferenceMetric::for_noise(&grid, &noise).unwrap();
    let oracle = Oracle::new(data, PathParams::new(1e-3).unwrap(), metric)
        .unwrap()
        .with_ode_steps(128)
        .unwrap();
    (grid, noise, oracle)
}

fn request(grid: &Grid, noise: &NoiseSpec, mode: SampleMode, steps: usize) -> SampleRequest {
    SampleRequest { count: COUNT, grid: grid.clone(), noise: noise.clone(), mode, steps, seed: 11, sharpen_eps: None }
}

fn nearest(data: &AtomDataset, x: &FunctionSample) -> (usize, f64) {
    data.atoms()
        .iter()
        .map(|a| norm_sq(&x.sub(a).unwrap()).sqrt())
        .enumerate()
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .unwrap()
}

fn reference(data: &AtomDataset) -> Vec<FunctionSample> {
    let mut rng = rng_from_seed(12);
    (0..COUNT).map(|_| data.atoms()[data.sample_index(&mut rng)].clone()).collect()
}

#[test]
fn exact_mean_field_generates_the_mixture_in_one_step() {
    let (grid, noise, oracle) = setup();
    let out = generate(&oracle.mean_field(), &request(&grid, &noise, SampleMode::OneStepU, 1), 1).unwrap();
    assert_eq!(out.nfe, 1);
    let data = oracle.dataset();
    let mut first = 0;
    for x in &out.samples {
        let (k, d) = nearest(data, x);
        // endpoints carry sigma_min of residual noise
        assert!(d < 0.01, "sample {d} away from the nearest atom");
        first += (k == 0) as usize;
    }
    let frac = first as f64 / COUNT as f64;
    let sd = (0.25 / COUNT as f64).sqrt();
    assert!((frac - 0.5).abs() < 4.0 * sd, "atom 0 fraction {frac}");
}

#[test]
fn exact_mean_flow_composes_across_steps() {
    let (grid, noise, oracle) = setup();
    let f0 = NoiseSampler::new(&grid, &noise).unwrap().sample(5, 1);
    let mean = oracle.mean_field();
    let one = one_step_u(&mean, &f0).unwrap();
    for steps in [2, 4] {
        let few = few_step_u(&mean, &f0, steps).unwrap();
        let rel = (norm_sq(&few.sub(&one).unwrap()) / norm_sq(&one)).sqrt();
        assert!(rel < 1e-5, "{steps} steps: {rel}");
    }
}

#[test]
fn metrics_prefer_exact_transport_over_coarse_euler() {
    let (grid, noise, oracle) = setup();
    let reference = reference(oracle.dataset());
    let exact = generate(&oracle.mean_field(), &request(&grid, &noise, SampleMode::OneStepU, 1), 1).unwrap();
    let coarse =
        generate(&oracle.marginal_field(), &request(&grid, &noise, SampleMode::EulerBaseline, 2), 1).unwrap();
    let e = stats_mse(&exact.samples, &reference).unwrap();
    let c = stats_mse(&coarse.samples, &reference).unwrap();
    assert!(e.variance < c.variance, "exact {} vs euler-2 {}", e.variance, c.variance);
    assert!(e.mean < 0.05, "{}", e.mean);
}
