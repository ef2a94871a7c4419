//! Sample-quality metrics: pointwise statistical functionals, KDE density
//! MSE, Fourier energy spectrum MSE and the variance-collapse monitor.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{FmfError, Result};
use crate::function_space::{FunctionSample, Grid};

/// Across-sample statistics at every point (channel-major, like
/// [`FunctionSample::values`]) plus an autocorrelation curve over lags.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionalCurves {
    pub mean: Vec<f64>,
    pub variance: Vec<f64>,
    pub skewness: Vec<f64>,
    /// Excess kurtosis (0 for a normal law).
    pub kurtosis: Vec<f64>,
    /// `autocorrelation[lag]` for lags along the last grid axis.
    pub autocorrelation: Vec<f64>,
    /// Points with zero variance; their skewness and kurtosis are reported as
    /// 0 and they are left out of the autocorrelation average.
    pub excluded_points: usize,
}

fn check_corpus(samples: &[FunctionSample], min: usize) -> Result<(&Grid, usize)> {
    if samples.len() < min {
        return Err(FmfError::param(format!(
            "need at least {min} samples, got {}",
            samples.len()
        )));
    }
    for s in &samples[1..] {
        s.check_compatible(&samples[0])?;
    }
    Ok((samples[0].grid(), samples[0].channels()))
}

pub fn stat_functionals(samples: &[FunctionSample]) -> Result<FunctionalCurves> {
    let (grid, channels) = check_corpus(samples, 4)?;
    let len = samples[0].values().len();
    let m = samples.len() as f64;
    let mut mean = vec![0.0; len];
    for s in samples {
        mean.iter_mut().zip(s.values()).for_each(|(a, v)| *a += v / m);
    }
    let (mut m2, mut m3, mut m4) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    for s in samples {
        for (i, v) in s.values().iter().enumerate() {
            let d = v - mean[i];
            let d2 = d * d;
            m2[i] += d2 / m;
            m3[i] += d2 * d / m;
            m4[i] += d2 * d2 / m;
        }
    }
    let mut excluded = 0;
    let mut skewness = vec![0.0; len];
    let mut kurtosis = vec![0.0; len];
    for i in 0..len {
        if m2[i] > 0.0 {
            skewness[i] = m3[i] / m2[i].powf(1.5);
            kurtosis[i] = m4[i] / (m2[i] * m2[i]) - 3.0;
        } else {
            excluded += 1;
        }
    }

    let (rows, n1) = grid.shape2();
    let mut autocorrelation = vec![0.0; n1];
    for (lag, slot) in autocorrelation.iter_mut().enumerate() {
        let (mut acc, mut count) = (0.0, 0usize);
        for c in 0..channels {
            for row in 0..rows {
                for j in 0..n1 - lag {
                    let a = c * grid.len() + row * n1 + j;
                    let b = a + lag;
                    if m2[a] <= 0.0 || m2[b] <= 0.0 {
                        continue;
                    }
                    let cov: f64 = samples
                        .iter()
                        .map(|s| (s.values()[a] - mean[a]) * (s.values()[b] - mean[b]))
                        .sum::<f64>()
                        / m;
                    acc += cov / (m2[a] * m2[b]).sqrt();
                    count += 1;
                }
            }
        }
        *slot = if count > 0 { acc / count as f64 } else { 0.0 };
    }
    Ok(FunctionalCurves {
        mean,
        variance: m2,
        skewness,
        kurtosis,
        autocorrelation,
        excluded_points: excluded,
    })
}

/// MSEs between the functional curves of two corpora.
#[derive(Debug, Clone, PartialEq)]
pub struct StatsReport {
    pub mean: f64,
    pub variance: f64,
    pub skewness: f64,
    pub kurtosis: f64,
    /// MSE over lags `1..=max(1, n/4)` of the autocorrelation curves.
    pub autocorrelation: f64,
    pub generated_count: usize,
    pub reference_count: usize,
    pub resolution: Vec<usize>,
}

fn mse(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() / a.len().max(1) as f64
}

pub fn stats_mse(generated: &[FunctionSample], reference: &[FunctionSample]) -> Result<StatsReport> {
    let g = stat_functionals(generated)?;
    let r = stat_functionals(reference)?;
    generated[0].check_compatible(&reference[0])?;
    let max_lag = (g.autocorrelation.len() / 4).max(1).min(g.autocorrelation.len() - 1);
    let lags = 1..=max_lag;
    Ok(StatsReport {
        mean: mse(&g.mean, &r.mean),
        variance: mse(&g.variance, &r.variance),
        skewness: mse(&g.skewness, &r.skewness),
        kurtosis: mse(&g.kurtosis, &r.kurtosis),
        autocorrelation: mse(&g.autocorrelation[lags.clone()], &r.autocorrelation[lags]),
        generated_count: generated.len(),
        reference_count: reference.len(),
        resolution: generated[0].grid().resolution().to_vec(),
    })
}

fn pooled(samples: &[FunctionSample]) -> Vec<f64> {
    samples.iter().flat_map(|s| s.values().iter().copied()).collect()
}

/// Scott's rule bandwidth `std * n^(-1/5)`.
pub fn scott_bandwidth(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    let h = var.sqrt() * n.powf(-0.2);
    if h > 0.0 {
        h
    } else {
        1e-3
    }
}

/// Gaussian KDE of `values` with bandwidth `h`, evaluated at `at`.
pub fn gaussian_kde(values: &[f64], h: f64, at: &[f64]) -> Vec<f64> {
    let norm = 1.0 / (values.len() as f64 * h * (2.0 * std::f64::consts::PI).sqrt());
    // sort once so each evaluation point only visits values within 8h
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    at.iter()
        .map(|&x| {
            let lo = sorted.partition_point(|&v| v < x - 8.0 * h);
            let hi = sorted.partition_point(|&v| v <= x + 8.0 * h);
            let s: f64 = sorted[lo..hi]
                .iter()
                .map(|&v| (-0.5 * ((x - v) / h).powi(2)).exp())
                .sum();
            s * norm
        })
        .collect()
}

/// Mean squared difference between KDE densities of the pooled point values
/// of both corpora on `eval_points` lattice points spanning the pooled range.
/// `bandwidth = None` uses Scott's rule per corpus.
pub fn density_mse(
    generated: &[FunctionSample],
    reference: &[FunctionSample],
    bandwidth: Option<f64>,
    eval_points: usize,
) -> Result<f64> {
    if generated.is_empty() || reference.is_empty() {
        return Err(FmfError::param("density MSE needs two nonempty corpora"));
    }
    if eval_points < 2 {
        return Err(FmfError::param("density MSE needs at least 2 evaluation points"));
    }
    if let Some(h) = bandwidth {
        if !(h.is_finite() && h > 0.0) {
            return Err(FmfError::param("KDE bandwidth must be positive"));
        }
    }
    let a = pooled(generated);
    let b = pooled(reference);
    let ha = bandwidth.unwrap_or_else(|| scott_bandwidth(&a));
    let hb = bandwidth.unwrap_or_else(|| scott_bandwidth(&b));
    let (lo, hi) = a
        .iter()
        .chain(&b)
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &v| (l.min(v), h.max(v)));
    let pad = 3.0 * ha.max(hb);
    let (lo, hi) = (lo - pad, hi + pad);
    let lattice: Vec<f64> = (0..eval_points)
        .map(|i| lo + (hi - lo) * i as f64 / (eval_points - 1) as f64)
        .collect();
    let da = gaussian_kde(&a, ha, &lattice);
    let db = gaussian_kde(&b, hb, &lattice);
    Ok(mse(&da, &db))
}

/// Corpus-averaged Fourier energy per band: one band per mode index in 1D,
/// integer-radius annuli in 2D. Energies are `|X_k|^2 / N^2`, so the bands
/// of one sample sum to its mean square.
pub fn band_energies(samples: &[FunctionSample]) -> Result<Vec<f64>> {
    let (grid, channels) = check_corpus(samples, 1)?;
    let (n0, n1) = grid.shape2();
    let freq = |k: usize, n: usize| -> f64 {
        let k = k as f64;
        let n = n as f64;
        if k <= n / 2.0 {
            k
        } else {
            n - k
        }
    };
    let nb = if grid.dim() == 1 {
        n1 / 2 + 1
    } else {
        let r = (freq(n0 / 2, n0).powi(2) + freq(n1 / 2, n1).powi(2)).sqrt();
        r.round() as usize + 1
    };
    let band_of: Vec<usize> = (0..n0 * n1)
        .map(|i| {
            let (a, b) = (i / n1, i % n1);
            let r = (freq(a, n0).powi(2) + freq(b, n1).powi(2)).sqrt();
            (r.round() as usize).min(nb - 1)
        })
        .collect();
    let mut planner = FftPlanner::<f64>::new();
    let f1 = planner.plan_fft_forward(n1);
    let f0 = planner.plan_fft_forward(n0);
    let total = (n0 * n1) as f64;
    let mut bands = vec![0.0; nb];
    let mut buf = vec![Complex::new(0.0, 0.0); n0 * n1];
    let mut col = vec![Complex::new(0.0, 0.0); n0];
    for s in samples {
        for c in 0..channels {
            for (b, v) in buf.iter_mut().zip(s.channel(c)) {
                *b = Complex::new(*v, 0.0);
            }
            for row in buf.chunks_mut(n1) {
                f1.process(row);
            }
            if n0 > 1 {
                for j in 0..n1 {
                    for i in 0..n0 {
                        col[i] = buf[i * n1 + j];
                    }
                    f0.process(&mut col);
                    for i in 0..n0 {
                        buf[i * n1 + j] = col[i];
                    }
                }
            }
            for (z, &b) in buf.iter().zip(&band_of) {
                bands[b] += z.norm_sqr() / (total * total);
            }
        }
    }
    let m = (samples.len() * channels) as f64;
    bands.iter_mut().for_each(|b| *b /= m);
    Ok(bands)
}

/// Mean over bands of the squared difference of corpus-averaged band energies.
pub fn spectrum_mse(generated: &[FunctionSample], reference: &[FunctionSample]) -> Result<f64> {
    let a = band_energies(generated)?;
    let b = band_energies(reference)?;
    if generated[0].grid() != reference[0].grid() {
        return Err(FmfError::shape("spectrum MSE needs corpora on one grid"));
    }
    Ok(mse(&a, &b))
}

/// Batch average of each output's spatial variance.
pub fn variance_monitor(outputs: &[FunctionSample]) -> Result<f64> {
    if outputs.is_empty() {
        return Err(FmfError::param("variance monitor needs a nonempty batch"));
    }
    let total: f64 = outputs
        .iter()
        .map(|o| {
            let v = o.values();
            let n = v.len() as f64;
            let mean = v.iter().sum::<f64>() / n;
            v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n
        })
        .sum();
    Ok(total / outputs.len() as f64)
}

/// Full evaluation of a generated corpus against a reference corpus.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub stats: StatsReport,
    pub density: f64,
    pub spectrum: f64,
}

pub const REPORT_HEADER: [&str; 4] = ["metric", "value", "generated_count", "reference_count"];

/// KDE lattice size used by [`evaluate`].
pub const DEFAULT_EVAL_POINTS: usize = 256;

pub fn evaluate(generated: &[FunctionSample], reference: &[FunctionSample]) -> Result<EvalReport> {
    Ok(EvalReport {
        stats: stats_mse(generated, reference)?,
        density: density_mse(generated, reference, None, DEFAULT_EVAL_POINTS)?,
        spectrum: spectrum_mse(generated, reference)?,
    })
}

impl EvalReport {
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("mean_mse", self.stats.mean),
            ("variance_mse", self.stats.variance),
            ("skewness_mse", self.stats.skewness),
            ("kurtosis_mse", self.stats.kurtosis),
            ("autocorrelation_mse", self.stats.autocorrelation),
            ("density_mse", self.density),
            ("spectrum_mse", self.spectrum),
        ]
    }

    /// CSV with [`REPORT_HEADER`] columns, one row per metric.
    pub fn write_csv<W: std::io::Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let io = |e: csv::Error| FmfError::Io(std::io::Error::other(e));
        w.write_record(REPORT_HEADER).map_err(io)?;
        for (name, v) in self.rows() {
            w.write_record([
                name.to_string(),
                format!("{v:?}"),
                self.stats.generated_count.to_string(),
                self.stats.reference_count.to_string(),
            ])
            .map_err(io)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::rng_from_seed;
    use rand::seq::SliceRandom;
    use rand::Rng;
    use rand_distr::StandardNormal;
    use std::f64::consts::PI;

    fn normal_corpus(grid: &Grid, m: usize, shift: f64, seed: u64) -> Vec<FunctionSample> {
        let mut rng = rng_from_seed(seed);
        (0..m)
            .map(|_| {
                let v = (0..grid.len())
                    .map(|_| shift + rng.sample::<f64, _>(StandardNormal))
                    .collect();
                FunctionSample::new(grid.clone(), 1, v).unwrap()
            })
            .collect()
    }

    #[test]
    fn constant_corpus_has_zero_variance() {
        let g = Grid::line(8).unwrap();
        let s = vec![FunctionSample::constant(&g, 1, 2.5); 5];
        let c = stat_functionals(&s).unwrap();
        assert!(c.mean.iter().all(|&m| (m - 2.5).abs() < 1e-15));
        assert!(c.variance.iter().all(|&v| v == 0.0));
        assert_eq!(c.excluded_points, 8);
        assert!(stat_functionals(&s[..3]).is_err());
    }

    #[test]
    fn symmetric_corpus_has_zero_mean_and_skew() {
        let g = Grid::line(16).unwrap();
        let h = FunctionSample::from_fn(&g, |x| (3.0 * x[0]).sin() + 0.2);
        let s = vec![h.clone(), h.scale(-1.0), h.clone(), h.scale(-1.0)];
        let c = stat_functionals(&s).unwrap();
        assert!(c.mean.iter().all(|m| m.abs() < 1e-15));
        assert!(c.skewness.iter().all(|s| s.abs() < 1e-12));
    }

    #[test]
    fn normal_values_have_zero_excess_kurtosis() {
        let g = Grid::line(8).unwrap();
        let s = normal_corpus(&g, 50_000, 0.0, 1);
        let c = stat_functionals(&s).unwrap();
        let k = c.kurtosis.iter().sum::<f64>() / c.kurtosis.len() as f64;
        assert!(k.abs() < 0.1, "{k}");
        assert!((c.autocorrelation[0] - 1.0).abs() < 1e-12);
        assert!(c.autocorrelation[1].abs() < 0.02);
    }

    #[test]
    fn stats_mse_identity_and_shift() {
        let g = Grid::line(16).unwrap();
        let s = normal_corpus(&g, 200, 0.0, 2);
        let r = stats_mse(&s, &s).unwrap();
        for v in [r.mean, r.variance, r.skewness, r.kurtosis, r.autocorrelation] {
            assert_eq!(v, 0.0);
        }
        let shifted: Vec<_> = s.iter().map(|x| x.map(|v| v + 0.3)).collect();
        let r = stats_mse(&shifted, &s).unwrap();
        assert!((r.mean - 0.09).abs() < 1e-12);
        assert!(r.variance < 1e-20);
    }

    #[test]
    fn stats_mse_between_halves_is_at_noise_floor() {
        let g = Grid::line(16).unwrap();
        let corpus = normal_corpus(&g, 4000, 0.0, 3);
        let (a, b) = corpus.split_at(2000);
        let r = stats_mse(a, b).unwrap();
        // noise floor: the 95th percentile over random re-splits
        let mut rng = rng_from_seed(4);
        let mut floors = Vec::new();
        for _ in 0..20 {
            let mut shuffled = corpus.clone();
            shuffled.shuffle(&mut rng);
            let (x, y) = shuffled.split_at(2000);
            floors.push(stats_mse(x, y).unwrap());
        }
        let max = |f: fn(&StatsReport) -> f64| floors.iter().map(f).fold(0.0, f64::max);
        assert!(r.mean <= 2.0 * max(|s| s.mean));
        assert!(r.variance <= 2.0 * max(|s| s.variance));
        assert!(r.kurtosis <= 2.0 * max(|s| s.kurtosis));
        // and absolutely small: the sampling error of a mean over 2000 draws
        assert!(r.mean < 5.0 * 2.0 / 2000.0);
    }

    #[test]
    fn density_mse_separates_distributions() {
        let g = Grid::line(10).unwrap();
        let a = normal_corpus(&g, 10_000, 0.0, 5);
        let b = normal_corpus(&g, 10_000, 0.0, 6);
        let c = normal_corpus(&g, 10_000, 3.0, 7);
        assert_eq!(density_mse(&a, &a, None, 128).unwrap(), 0.0);
        let same = density_mse(&a, &b, None, 128).unwrap();
        let apart = density_mse(&a, &c, None, 128).unwrap();
        assert!(apart > 10.0 * same, "{same} vs {apart}");
        assert!(density_mse(&a, &[], None, 128).is_err());
    }

    #[test]
    fn density_mse_same_law_below_bootstrap_floor() {
        let g = Grid::line(10).unwrap();
        let a = normal_corpus(&g, 10_000, 0.0, 8);
        let b = normal_corpus(&g, 10_000, 0.0, 9);
        let v = density_mse(&a, &b, None, 128).unwrap();
        let pool: Vec<_> = a.iter().chain(&b).cloned().collect();
        let mut rng = rng_from_seed(10);
        let mut floor: f64 = 0.0;
        for _ in 0..10 {
            let mut p = pool.clone();
            p.shuffle(&mut rng);
            let (x, y) = p.split_at(10_000);
            floor = floor.max(density_mse(x, y, None, 128).unwrap());
        }
        assert!(v <= 3.0 * floor, "{v} vs floor {floor}");
    }

    fn direct_band_energies(v: &[f64]) -> Vec<f64> {
        let n = v.len();
        let mut e = vec![0.0; n / 2 + 1];
        for k in 0..n {
            let (mut re, mut im) = (0.0, 0.0);
            for (j, x) in v.iter().enumerate() {
                let a = -2.0 * PI * (k * j) as f64 / n as f64;
                re += x * a.cos();
                im += x * a.sin();
            }
            let band = k.min(n - k);
            e[band] += (re * re + im * im) / (n * n) as f64;
        }
        e
    }

    #[test]
    fn spectrum_mse_single_modes() {
        let g = Grid::line(32).unwrap();
        let s1 = vec![FunctionSample::from_fn(&g, |x| (2.0 * PI * x[0]).sin()); 3];
        let s2 = vec![FunctionSample::from_fn(&g, |x| (4.0 * PI * x[0]).sin()); 3];
        assert_eq!(spectrum_mse(&s1, &s1).unwrap(), 0.0);
        let e1 = direct_band_energies(s1[0].values());
        let e2 = direct_band_energies(s2[0].values());
        let expect = mse(&e1, &e2);
        let got = spectrum_mse(&s1, &s2).unwrap();
        assert!((got - expect).abs() < 1e-12 * expect.max(1e-12));
        // energy sits mostly in band 1 vs band 2
        assert!(e1[1] > 0.5 * e1.iter().sum::<f64>());
        assert!(e2[2] > 0.5 * e2.iter().sum::<f64>());
    }

    #[test]
    fn spectrum_is_shift_invariant_and_parseval() {
        let g = Grid::plane(8, 12).unwrap();
        let s = normal_corpus(&g, 20, 0.0, 11);
        let shifted: Vec<_> = s
            .iter()
            .map(|f| {
                let mut v = f.values().to_vec();
                v.rotate_left(12 * 3); // shift by 3 rows
                for row in v.chunks_mut(12) {
                    row.rotate_right(5);
                }
                FunctionSample::new(g.clone(), 1, v).unwrap()
            })
            .collect();
        assert!(spectrum_mse(&s, &shifted).unwrap() < 1e-24);
        let e = band_energies(&s[..1]).unwrap();
        let ms = s[0].values().iter().map(|v| v * v).sum::<f64>() / g.len() as f64;
        assert!((e.iter().sum::<f64>() - ms).abs() < 1e-12);
    }

    #[test]
    fn spectrum_mse_halves_below_floor() {
        let g = Grid::line(32).unwrap();
        let corpus = normal_corpus(&g, 20_000, 0.0, 12);
        let (a, b) = corpus.split_at(10_000);
        let v = spectrum_mse(a, b).unwrap();
        let mut rng = rng_from_seed(13);
        let mut floor: f64 = 0.0;
        for _ in 0..10 {
            let mut p = corpus.clone();
            p.shuffle(&mut rng);
            let (x, y) = p.split_at(10_000);
            floor = floor.max(spectrum_mse(x, y).unwrap());
        }
        assert!(v <= 3.0 * floor, "{v} vs {floor}");
    }

    #[test]
    fn variance_monitor_cases() {
        let g = Grid::line(1000).unwrap();
        assert_eq!(variance_monitor(&[FunctionSample::constant(&g, 1, 3.0)]).unwrap(), 0.0);
        let x = FunctionSample::from_fn(&g, |c| c[0]);
        let v = variance_monitor(std::slice::from_ref(&x)).unwrap();
        assert!((v - 1.0 / 12.0).abs() < 1e-3);
        let v2 = variance_monitor(&[x.scale(2.0)]).unwrap();
        assert!((v2 - 4.0 * v).abs() < 1e-12);
        let v3 = variance_monitor(&[x.map(|a| a + 7.0)]).unwrap();
        assert!((v3 - v).abs() < 1e-12);
        assert!(variance_monitor(&[]).is_err());
    }

    #[test]
    fn report_csv_schema() {
        let g = Grid::line(16).unwrap();
        let s = normal_corpus(&g, 10, 0.0, 14);
        let r = evaluate(&s, &s).unwrap();
        let mut buf = Vec::new();
        r.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        let lines: Vec<_> = text.lines().collect();
        assert_eq!(lines[0], "metric,value,generated_count,reference_count");
        assert_eq!(lines[1], "mean_mse,0.0,10,10");
        assert_eq!(lines.len(), 8);
    }
}
