//! Monte-Carlo forecasting from ensemble statistics.
//!
//! Each draw keeps the modes at their ensemble mean and samples every
//! eigenvalue and amplitude from independent Gaussians on its real and
//! imaginary parts. The draws are evaluated at the requested times and
//! reduced to a mean trajectory and per-entry variances.

use nalgebra::{DMatrix, DVector};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::bop::{derived_rng, EnsembleStatistics};
use crate::error::{DmdError, Result};
use crate::model::{DmdModel, MAX_EXPONENT};
use crate::C64;

/// Overflowing draws are redrawn; the total number of attempts is capped at
/// this many times the requested draw count.
pub const ATTEMPTS_PER_DRAW: usize = 10;

/// Mean and variance trajectories at a set of times.
#[derive(Debug, Clone, PartialEq)]
pub struct Forecast {
    pub times: Vec<f64>,
    /// n × |times|.
    pub mean: DMatrix<C64>,
    /// Variance of the real part, n × |times|.
    pub variance: DMatrix<f64>,
    /// Variance of the imaginary part; all zeros for a deterministic forecast.
    pub variance_imag: DMatrix<f64>,
    pub draws: usize,
}

fn gaussian<R: Rng + ?Sized>(mean: C64, var_re: f64, var_im: f64, rng: &mut R) -> C64 {
    let zr: f64 = rng.sample(StandardNormal);
    let zi: f64 = rng.sample(StandardNormal);
    let mut out = mean;
    if var_re > 0.0 {
        out.re += var_re.sqrt() * zr;
    }
    if var_im > 0.0 {
        out.im += var_im.sqrt() * zi;
    }
    out
}

/// One model realization: mean modes, Gaussian eigenvalues and amplitudes.
pub fn sample_model<R: Rng + ?Sized>(stats: &EnsembleStatistics, rng: &mut R) -> DmdModel {
    let r = stats.rank();
    let mut eigenvalues = DVector::zeros(r);
    let mut amplitudes = DVector::zeros(r);
    for j in 0..r {
        eigenvalues[j] = gaussian(
            stats.eigenvalue_mean[j],
            stats.eigenvalue_variance.re[j],
            stats.eigenvalue_variance.im[j],
            rng,
        );
        amplitudes[j] = gaussian(
            stats.amplitude_mean[j],
            stats.amplitude_variance.re[j],
            stats.amplitude_variance.im[j],
            rng,
        );
    }
    DmdModel {
        modes: stats.mode_mean.clone(),
        eigenvalues,
        amplitudes,
    }
}

struct Draw {
    values: DMatrix<C64>,
    attempts: usize,
}

fn draw_trajectory(stats: &EnsembleStatistics, times: &[f64], seed: u64, index: usize, budget: usize) -> Result<Draw> {
    let mut rng = derived_rng(seed, index as u64);
    let mut last_err = None;
    for attempt in 1..=budget {
        match sample_model(stats, &mut rng).reconstruct(times) {
            Ok(values) => return Ok(Draw { values, attempts: attempt }),
            Err(e) => last_err = Some(e),
        }
    }
    Err(last_err.unwrap_or(DmdError::EigenvalueOverflow { exponent: MAX_EXPONENT }))
}

/// Monte-Carlo forecast with `draws` realizations.
///
/// Draw `k` uses an RNG seeded with `seed ⊕ k`, so the result does not
/// depend on `threads`. A draw whose exponentials overflow is replaced by
/// a fresh one from the same stream.
pub fn forecast(
    stats: &EnsembleStatistics,
    times: &[f64],
    draws: usize,
    seed: u64,
    threads: usize,
) -> Result<Forecast> {
    if draws < 2 {
        return Err(DmdError::InvalidConfig("a forecast needs at least two draws".into()));
    }
    if times.iter().any(|t| !t.is_finite()) {
        return Err(DmdError::InvalidConfig("forecast times must be finite".into()));
    }
    let budget = ATTEMPTS_PER_DRAW * draws;
    let one = |k: usize| draw_trajectory(stats, times, seed, k, budget);
    let results: Vec<Result<Draw>> = if threads > 1 {
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .map_err(|e| DmdError::InvalidConfig(e.to_string()))?;
        pool.install(|| (0..draws).into_par_iter().map(one).collect())
    } else {
        (0..draws).map(one).collect()
    };
    let samples: Vec<Draw> = results.into_iter().collect::<Result<_>>()?;
    let attempts: usize = samples.iter().map(|d| d.attempts).sum();
    if attempts > budget {
        return Err(DmdError::EigenvalueOverflow { exponent: MAX_EXPONENT });
    }
    if attempts > draws {
        log::info!("{} overflowing draws were redrawn", attempts - draws);
    }
    Ok(reduce(times, samples.iter().map(|d| &d.values), draws))
}

// Welford updates in draw order; identical draws give exactly zero variance.
fn reduce<'a>(times: &[f64], values: impl Iterator<Item = &'a DMatrix<C64>>, count: usize) -> Forecast {
    let mut mean: Option<DMatrix<C64>> = None;
    let mut m2_re = DMatrix::<f64>::zeros(0, 0);
    let mut m2_im = DMatrix::<f64>::zeros(0, 0);
    for (k, v) in values.enumerate() {
        let Some(mean) = mean.as_mut() else {
            mean = Some(v.clone());
            m2_re = DMatrix::zeros(v.nrows(), v.ncols());
            m2_im = DMatrix::zeros(v.nrows(), v.ncols());
            continue;
        };
        let weight = 1.0 / (k + 1) as f64;
        for (i, z) in v.iter().enumerate() {
            let delta = z - mean[i];
            mean[i] += delta * weight;
            let after = z - mean[i];
            m2_re[i] += delta.re * after.re;
            m2_im[i] += delta.im * after.im;
        }
    }
    let denom = (count - 1) as f64;
    Forecast {
        times: times.to_vec(),
        mean: mean.expect("at least one draw"),
        variance: m2_re / denom,
        variance_imag: m2_im / denom,
        draws: count,
    }
}

/// Forecast from a single fitted model: its reconstruction with zero variance.
pub fn deterministic_forecast(model: &DmdModel, times: &[f64]) -> Result<Forecast> {
    let mean = model.reconstruct(times)?;
    let (n, nt) = mean.shape();
    Ok(Forecast {
        times: times.to_vec(),
        mean,
        variance: DMatrix::zeros(n, nt),
        variance_imag: DMatrix::zeros(n, nt),
        draws: 1,
    })
}

/// Fraction of entries with `|Re(truth) − Re(mean)| ≤ n_sigma · sqrt(variance)`.
pub fn coverage_fraction(fc: &Forecast, truth: &DMatrix<C64>, n_sigma: f64) -> Result<f64> {
    if truth.shape() != fc.mean.shape() {
        return Err(DmdError::ShapeMismatch(format!(
            "truth is {:?}, forecast is {:?}",
            truth.shape(),
            fc.mean.shape()
        )));
    }
    if n_sigma.is_nan() || n_sigma <= 0.0 {
        return Err(DmdError::InvalidConfig("n_sigma must be positive".into()));
    }
    let total = truth.len();
    if total == 0 {
        return Ok(1.0);
    }
    let inside = truth
        .iter()
        .zip(fc.mean.iter())
        .zip(fc.variance.iter())
        .filter(|((t, m), v)| (t.re - m.re).abs() <= n_sigma * v.sqrt())
        .count();
    Ok(inside as f64 / total as f64)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::bop::SplitVariance;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn stats(var_w: (f64, f64), var_b: (f64, f64)) -> EnsembleStatistics {
        let modes = DMatrix::from_fn(3, 2, |i, j| c(1.0 + i as f64, (j as f64) * 0.5));
        let model = DmdModel::new(
            modes,
            DVector::from_vec(vec![c(-0.2, 1.0), c(-0.5, 0.0)]),
            DVector::from_vec(vec![c(1.0, 0.5), c(-0.3, 0.0)]),
        )
        .unwrap();
        EnsembleStatistics {
            mode_mean: model.modes.clone(),
            mode_variance: SplitVariance {
                re: DMatrix::zeros(3, 2),
                im: DMatrix::zeros(3, 2),
            },
            eigenvalue_mean: model.eigenvalues,
            eigenvalue_variance: SplitVariance {
                re: DVector::from_element(2, var_w.0),
                im: DVector::from_element(2, var_w.1),
            },
            amplitude_mean: model.amplitudes,
            amplitude_variance: SplitVariance {
                re: DVector::from_element(2, var_b.0),
                im: DVector::from_element(2, var_b.1),
            },
            accepted_trials: 10,
            rejected_trials: 0,
        }
    }

    #[test]
    fn zero_variance_sample_is_the_mean() {
        let s = stats((0.0, 0.0), (0.0, 0.0));
        assert_eq!(sample_model(&s, &mut derived_rng(1, 0)), s.mean_model());
    }

    #[test]
    fn sample_variance_matches() {
        let s = stats((0.01, 0.04), (0.0, 0.0));
        let mut rng = derived_rng(9, 0);
        let ws: Vec<C64> = (0..10_000).map(|_| sample_model(&s, &mut rng).eigenvalues[0]).collect();
        let n = ws.len() as f64;
        let mean = ws.iter().sum::<C64>() / n;
        let vr = ws.iter().map(|w| (w.re - mean.re).powi(2)).sum::<f64>() / (n - 1.0);
        let vi = ws.iter().map(|w| (w.im - mean.im).powi(2)).sum::<f64>() / (n - 1.0);
        assert!((vr / 0.01 - 1.0).abs() < 0.1, "{vr}");
        assert!((vi / 0.04 - 1.0).abs() < 0.1, "{vi}");
    }

    #[test]
    fn sampling_is_reproducible() {
        let s = stats((0.01, 0.02), (0.1, 0.1));
        assert_eq!(
            sample_model(&s, &mut derived_rng(4, 2)),
            sample_model(&s, &mut derived_rng(4, 2))
        );
    }

    #[test]
    fn zero_variance_forecast_collapses() {
        let s = stats((0.0, 0.0), (0.0, 0.0));
        let times = [0.0, 0.5, 1.0, 3.0];
        let fc = forecast(&s, &times, 8, 3, 1).unwrap();
        let expected = s.mean_model().reconstruct(&times).unwrap();
        assert!((&fc.mean - &expected).iter().all(|z| z.norm() <= 1e-15 * (1.0 + z.norm())));
        assert!(fc.variance.iter().chain(fc.variance_imag.iter()).all(|&v| v == 0.0));
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let s = stats((0.01, 0.02), (0.05, 0.05));
        let times: Vec<f64> = (0..20).map(|k| k as f64 * 0.1).collect();
        let a = forecast(&s, &times, 50, 7, 1).unwrap();
        let b = forecast(&s, &times, 50, 7, 4).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn overflowing_draws_exhaust_budget() {
        let mut s = stats((0.0, 0.0), (0.0, 0.0));
        s.eigenvalue_mean[0] = c(800.0, 0.0);
        assert!(matches!(
            forecast(&s, &[0.0, 1.0], 4, 0, 1),
            Err(DmdError::EigenvalueOverflow { .. })
        ));
    }

    #[test]
    fn coverage_edge_cases() {
        let s = stats((0.0, 0.0), (0.0, 0.0));
        let fc = deterministic_forecast(&s.mean_model(), &[0.0, 1.0]).unwrap();
        assert_eq!(coverage_fraction(&fc, &fc.mean, 3.0).unwrap(), 1.0);
        let shifted = fc.mean.map(|z| z + c(1e-3, 0.0));
        assert_eq!(coverage_fraction(&fc, &shifted, 3.0).unwrap(), 0.0);
        assert!(matches!(
            coverage_fraction(&fc, &DMatrix::zeros(1, 1), 2.0),
            Err(DmdError::ShapeMismatch(_))
        ));
    }

    #[test]
    fn gaussian_coverage_at_two_sigma() {
        let mut rng = derived_rng(21, 0);
        let (n, nt) = (100, 100);
        let variance = DMatrix::from_fn(n, nt, |i, j| 0.01 + 0.001 * ((i + j) % 7) as f64);
        let fc = Forecast {
            times: (0..nt).map(|k| k as f64).collect(),
            mean: DMatrix::from_element(n, nt, c(1.0, 0.0)),
            variance: variance.clone(),
            variance_imag: DMatrix::zeros(n, nt),
            draws: 2,
        };
        let truth = DMatrix::from_fn(n, nt, |i, j| {
            let z: f64 = rng.sample(StandardNormal);
            c(1.0 + variance[(i, j)].sqrt() * z, 0.0)
        });
        let frac = coverage_fraction(&fc, &truth, 2.0).unwrap();
        assert!((frac - 0.954).abs() <= 0.02, "{frac}");
    }
}
