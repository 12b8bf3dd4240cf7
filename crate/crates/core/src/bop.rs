//! Bagging over snapshot subsets with optimized DMD (BOP-DMD).
//!
//! A base model fitted on all snapshots seeds a sequence of trials. Each
//! trial fits optimized DMD on `p` randomly chosen snapshots, its modes are
//! matched to the base model, and accepted trials are reduced to elementwise
//! means and variances of modes, eigenvalues and amplitudes.

use nalgebra::{DMatrix, DVector};
use rand::seq::index;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::assignment::hungarian;
use crate::error::{DmdError, Result};
use crate::model::DmdModel;
use crate::snapshot::SnapshotMatrix;
use crate::varpro::{optimized_dmd, ConvergenceReport, SolverConfig};
use crate::C64;

/// Bagging settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BagConfig {
    /// Snapshots per bag (`p`).
    pub bag_size: usize,
    /// Number of trials (`K`).
    pub trials: usize,
    /// Extra draws allowed per trial after a rejected fit.
    pub max_redraws: usize,
    /// Trials with `max Re(ω)` above this are rejected; `None` means
    /// `2 / (t_m − t_1)` of the full data.
    pub rejection_real_cap: Option<f64>,
    pub base_seed: u64,
    /// Seed every trial from the base model instead of the latest accepted
    /// trial. Required for parallel execution.
    pub freeze_seed: bool,
    /// Draw columns with replacement; duplicates are collapsed, so bags may
    /// hold fewer than `bag_size` distinct snapshots.
    pub with_replacement: bool,
    /// Worker threads; values above 1 need `freeze_seed`.
    pub threads: usize,
}

impl Default for BagConfig {
    fn default() -> Self {
        Self {
            bag_size: 20,
            trials: 100,
            max_redraws: 10,
            rejection_real_cap: None,
            base_seed: 0,
            freeze_seed: false,
            with_replacement: false,
            threads: 1,
        }
    }
}

impl BagConfig {
    pub fn validate(&self, m: usize, r: usize) -> Result<()> {
        if self.bag_size < 2 || self.bag_size >= m || self.bag_size < r {
            return Err(DmdError::InvalidBagSize { p: self.bag_size, m });
        }
        if self.trials < 2 {
            return Err(DmdError::InvalidConfig("at least two trials are needed".into()));
        }
        if self.threads > 1 && !self.freeze_seed {
            return Err(DmdError::InvalidConfig(
                "parallel trials need a frozen seed; chained seeding is sequential".into(),
            ));
        }
        Ok(())
    }
}

/// Real and imaginary parts of a variance, kept separately.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitVariance<T> {
    pub re: T,
    pub im: T,
}

/// Elementwise ensemble means and sample variances (divisor `K − 1`).
#[derive(Debug, Clone, PartialEq)]
pub struct EnsembleStatistics {
    /// Mean modes, re-normalized to the [`DmdModel`] convention.
    pub mode_mean: DMatrix<C64>,
    pub mode_variance: SplitVariance<DMatrix<f64>>,
    pub eigenvalue_mean: DVector<C64>,
    pub eigenvalue_variance: SplitVariance<DVector<f64>>,
    pub amplitude_mean: DVector<C64>,
    pub amplitude_variance: SplitVariance<DVector<f64>>,
    pub accepted_trials: usize,
    pub rejected_trials: usize,
}

impl EnsembleStatistics {
    pub fn rank(&self) -> usize {
        self.eigenvalue_mean.len()
    }

    pub fn n(&self) -> usize {
        self.mode_mean.nrows()
    }

    /// The model built from the means.
    pub fn mean_model(&self) -> DmdModel {
        DmdModel {
            modes: self.mode_mean.clone(),
            eigenvalues: self.eigenvalue_mean.clone(),
            amplitudes: self.amplitude_mean.clone(),
        }
    }
}

/// Draws `p` distinct snapshot indices out of `m`, sorted ascending.
pub fn sample_bag<R: Rng + ?Sized>(m: usize, p: usize, rng: &mut R) -> Result<Vec<usize>> {
    if p == 0 || p >= m {
        return Err(DmdError::InvalidBagSize { p, m });
    }
    let mut idx = index::sample(rng, m, p).into_vec();
    idx.sort_unstable();
    Ok(idx)
}

/// Draws `p` indices with replacement and keeps the distinct ones, sorted.
pub fn sample_bag_with_replacement<R: Rng + ?Sized>(m: usize, p: usize, rng: &mut R) -> Result<Vec<usize>> {
    if p == 0 || p >= m {
        return Err(DmdError::InvalidBagSize { p, m });
    }
    let mut idx: Vec<usize> = (0..p).map(|_| rng.random_range(0..m)).collect();
    idx.sort_unstable();
    idx.dedup();
    Ok(idx)
}

/// The RNG for trial (or draw) `index`: seeded with `seed ⊕ index`.
pub fn derived_rng(seed: u64, index: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed ^ index)
}

/// Permutes the columns of `model` so that its eigenvalues match those of
/// `reference` with minimum total distance `Σ |ω_model − ω_ref|`.
pub fn align_to_reference(model: &DmdModel, reference: &DmdModel) -> Result<DmdModel> {
    let r = reference.rank();
    if model.rank() != r {
        return Err(DmdError::ShapeMismatch(format!(
            "cannot align rank {} to rank {r}",
            model.rank()
        )));
    }
    let cost: Vec<Vec<f64>> = (0..r)
        .map(|k| {
            (0..r)
                .map(|i| (model.eigenvalues[i] - reference.eigenvalues[k]).norm())
                .collect()
        })
        .collect();
    let assign = hungarian(&cost);
    Ok(model.permuted(&assign).normalized())
}

// Welford updates in model order; identical inputs give exactly zero variance.
fn mean_and_variance<'a>(values: impl Iterator<Item = &'a C64>, count: usize) -> (C64, f64, f64) {
    let mut mean = C64::new(0.0, 0.0);
    let (mut m2_re, mut m2_im) = (0.0, 0.0);
    for (k, z) in values.enumerate() {
        let delta = z - mean;
        mean += delta / (k + 1) as f64;
        let after = z - mean;
        m2_re += delta.re * after.re;
        m2_im += delta.im * after.im;
    }
    let denom = (count - 1) as f64;
    (mean, m2_re / denom, m2_im / denom)
}

/// Elementwise statistics over already aligned models of equal shape.
pub fn ensemble_statistics(models: &[DmdModel]) -> Result<EnsembleStatistics> {
    let k = models.len();
    if k < 2 {
        return Err(DmdError::InsufficientModels(k));
    }
    let (n, r) = models[0].modes.shape();
    if models.iter().any(|m| m.modes.shape() != (n, r)) {
        return Err(DmdError::ShapeMismatch("models differ in shape".into()));
    }

    let mut mode_mean = DMatrix::zeros(n, r);
    let mut mode_var_re = DMatrix::zeros(n, r);
    let mut mode_var_im = DMatrix::zeros(n, r);
    for j in 0..r {
        for i in 0..n {
            let (mu, vr, vi) = mean_and_variance(models.iter().map(|m| &m.modes[(i, j)]), k);
            mode_mean[(i, j)] = mu;
            mode_var_re[(i, j)] = vr;
            mode_var_im[(i, j)] = vi;
        }
    }
    let mut w_mean = DVector::zeros(r);
    let mut w_var = SplitVariance {
        re: DVector::zeros(r),
        im: DVector::zeros(r),
    };
    let mut b_mean = DVector::zeros(r);
    let mut b_var = w_var.clone();
    for j in 0..r {
        let (mu, vr, vi) = mean_and_variance(models.iter().map(|m| &m.eigenvalues[j]), k);
        w_mean[j] = mu;
        w_var.re[j] = vr;
        w_var.im[j] = vi;
        let (mu, vr, vi) = mean_and_variance(models.iter().map(|m| &m.amplitudes[j]), k);
        b_mean[j] = mu;
        b_var.re[j] = vr;
        b_var.im[j] = vi;
    }

    // renormalize the mean modes without touching the mean amplitudes
    let unit = DmdModel {
        modes: mode_mean,
        eigenvalues: w_mean.clone(),
        amplitudes: DVector::from_element(r, C64::new(1.0, 0.0)),
    }
    .normalized();

    Ok(EnsembleStatistics {
        mode_mean: unit.modes,
        mode_variance: SplitVariance {
            re: mode_var_re,
            im: mode_var_im,
        },
        eigenvalue_mean: w_mean,
        eigenvalue_variance: w_var,
        amplitude_mean: b_mean,
        amplitude_variance: b_var,
        accepted_trials: k,
        rejected_trials: 0,
    })
}

/// Output of [`bop_dmd`].
#[derive(Debug, Clone)]
pub struct BopFit {
    pub statistics: EnsembleStatistics,
    /// Accepted trial models, aligned to the base model, in trial order.
    pub models: Vec<DmdModel>,
    /// Optimized DMD on the full data; the alignment reference.
    pub base_model: DmdModel,
    pub base_report: ConvergenceReport,
}

struct TrialOutcome {
    model: Option<DmdModel>,
    rejected: usize,
}

struct Trials<'a> {
    data: &'a SnapshotMatrix,
    r: usize,
    bag: &'a BagConfig,
    solver: &'a SolverConfig,
    base: &'a DmdModel,
    real_cap: f64,
}

fn run_trial(ctx: &Trials<'_>, seed: &DVector<C64>, trial: usize) -> TrialOutcome {
    let Trials {
        data,
        r,
        bag,
        solver,
        base,
        real_cap,
    } = *ctx;
    let mut rng = derived_rng(bag.base_seed, trial as u64);
    let mut rejected = 0;
    for _ in 0..=bag.max_redraws {
        let drawn = if bag.with_replacement {
            sample_bag_with_replacement(data.m(), bag.bag_size, &mut rng)
        } else {
            sample_bag(data.m(), bag.bag_size, &mut rng)
        };
        let fit = drawn
            .and_then(|idx| data.select_columns(&idx))
            .and_then(|sub| optimized_dmd(&sub, r, Some(seed), solver));
        match fit {
            Ok((model, report))
                if report.converged && model.eigenvalues.iter().all(|w| w.re <= real_cap) =>
            {
                match align_to_reference(&model, base) {
                    Ok(aligned) => {
                        return TrialOutcome {
                            model: Some(aligned),
                            rejected,
                        }
                    }
                    Err(_) => rejected += 1,
                }
            }
            _ => rejected += 1,
        }
    }
    log::debug!("trial {trial} exhausted its redraws");
    TrialOutcome { model: None, rejected }
}

/// Bagging, optimized DMD.
///
/// In chained mode (the default) every trial is seeded with the eigenvalues
/// of the most recently accepted trial; with [`BagConfig::freeze_seed`] all
/// trials start from the base model and may run on several threads. Both
/// modes are deterministic for a given [`BagConfig::base_seed`].
pub fn bop_dmd(data: &SnapshotMatrix, r: usize, bag: &BagConfig, solver: &SolverConfig) -> Result<BopFit> {
    bag.validate(data.m(), r)?;
    solver.validate()?;
    let (base_model, base_report) = optimized_dmd(data, r, None, solver)?;
    if !base_report.converged {
        log::warn!("base fit did not converge: {:?}", base_report.termination_reason);
    }
    let real_cap = bag.rejection_real_cap.unwrap_or(2.0 / data.span());

    let ctx = Trials {
        data,
        r,
        bag,
        solver,
        base: &base_model,
        real_cap,
    };

    let outcomes: Vec<TrialOutcome> = if bag.freeze_seed {
        let seed = &base_model.eigenvalues;
        let trial = |k| run_trial(&ctx, seed, k);
        if bag.threads > 1 {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(bag.threads)
                .build()
                .map_err(|e| DmdError::InvalidConfig(e.to_string()))?;
            pool.install(|| (0..bag.trials).into_par_iter().map(trial).collect())
        } else {
            (0..bag.trials).map(trial).collect()
        }
    } else {
        let mut seed = base_model.eigenvalues.clone();
        let mut out = Vec::with_capacity(bag.trials);
        for k in 0..bag.trials {
            let outcome = run_trial(&ctx, &seed, k);
            if let Some(m) = &outcome.model {
                seed = m.eigenvalues.clone();
            }
            out.push(outcome);
        }
        out
    };

    let rejected: usize = outcomes.iter().map(|o| o.rejected).sum();
    let models: Vec<DmdModel> = outcomes.into_iter().filter_map(|o| o.model).collect();
    if models.len() < 2 {
        return Err(DmdError::TooFewAcceptedTrials {
            accepted: models.len(),
            rejected,
        });
    }
    let mut statistics = ensemble_statistics(&models)?;
    statistics.rejected_trials = rejected;
    Ok(BopFit {
        statistics,
        models,
        base_model,
        base_report,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand_distr::{Distribution, Normal};

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    fn model_with(omegas: &[C64]) -> DmdModel {
        let r = omegas.len();
        let modes = DMatrix::from_fn(r + 2, r, |i, j| c(1.0 + (i * (j + 1)) as f64 * 0.3, 0.1 * j as f64));
        DmdModel::new(
            modes,
            DVector::from_row_slice(omegas),
            DVector::from_fn(r, |j, _| c(1.0 + j as f64, -0.5)),
        )
        .unwrap()
    }

    #[test]
    fn bag_is_sorted_distinct_and_reproducible() {
        let a = sample_bag(5, 4, &mut derived_rng(3, 0)).unwrap();
        assert_eq!(a.len(), 4);
        assert!(a.windows(2).all(|w| w[0] < w[1]));
        assert!(a.iter().all(|&k| k < 5));
        assert_eq!(a, sample_bag(5, 4, &mut derived_rng(3, 0)).unwrap());
        assert!(matches!(
            sample_bag(5, 5, &mut derived_rng(0, 0)),
            Err(DmdError::InvalidBagSize { .. })
        ));
    }

    #[test]
    fn bag_inclusion_is_uniform() {
        let mut rng = derived_rng(17, 0);
        let mut counts = [0usize; 100];
        let draws = 10_000;
        for _ in 0..draws {
            for k in sample_bag(100, 20, &mut rng).unwrap() {
                counts[k] += 1;
            }
        }
        for c in counts {
            let freq = c as f64 / draws as f64;
            assert!((freq - 0.2).abs() <= 0.2 * 0.15, "frequency {freq}");
        }
    }

    #[test]
    fn reversed_columns_are_restored() {
        let reference = model_with(&[c(-2.0, 0.0), c(0.0, 1.0), c(1.0, 0.0)]);
        let reversed = reference.permuted(&[2, 1, 0]);
        assert_eq!(align_to_reference(&reversed, &reference).unwrap(), reference);
    }

    #[test]
    fn small_perturbation_matches_nearest() {
        let reference = model_with(&[c(-2.0, 0.0), c(0.0, 1.0), c(1.0, 0.0)]);
        let mut moved = reference.permuted(&[1, 2, 0]);
        for w in moved.eigenvalues.iter_mut() {
            *w += c(1e-3, -1e-3);
        }
        let aligned = align_to_reference(&moved, &reference).unwrap();
        for (a, b) in aligned.eigenvalues.iter().zip(reference.eigenvalues.iter()) {
            assert!((a - b).norm() < 2e-3);
        }
    }

    /// Greedy nearest-neighbour matching takes 0 → 0 (cost 0.9) and is then
    /// forced into 1 → 2 (cost 9.1); the optimum is 0 → 1, 1 → 0.
    #[test]
    fn optimal_where_greedy_fails() {
        let reference = model_with(&[c(0.0, 0.0), c(1.0, 0.0), c(10.0, 0.0)]);
        let model = model_with(&[c(0.9, 0.0), c(-0.5, 0.0), c(10.0, 0.0)]);
        let aligned = align_to_reference(&model, &reference).unwrap();

        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let total = |p: &[usize; 3]| -> f64 {
            (0..3).map(|k| (model.eigenvalues[p[k]] - reference.eigenvalues[k]).norm()).sum()
        };
        let best = perms.iter().min_by(|a, b| total(a).total_cmp(&total(b))).unwrap();
        let expected: Vec<C64> = best.iter().map(|&i| model.eigenvalues[i]).collect();
        assert_eq!(aligned.eigenvalues.as_slice(), expected.as_slice());
        assert_eq!(aligned.eigenvalues[0], c(-0.5, 0.0));
    }

    #[test]
    fn identical_models_have_zero_variance() {
        let m = model_with(&[c(-1.0, 2.0), c(0.5, 0.0)]);
        let s = ensemble_statistics(&[m.clone(), m.clone()]).unwrap();
        assert!(s.eigenvalue_variance.re.iter().chain(s.eigenvalue_variance.im.iter()).all(|&v| v == 0.0));
        assert!(s.mode_variance.re.iter().all(|&v| v == 0.0));
        assert!(s.amplitude_variance.im.iter().all(|&v| v == 0.0));
        assert!(matches!(ensemble_statistics(&[m]), Err(DmdError::InsufficientModels(1))));
    }

    #[test]
    fn hand_arithmetic() {
        let a = model_with(&[c(1.0, 0.0)]);
        let b = model_with(&[c(3.0, 0.0)]);
        let s = ensemble_statistics(&[a, b]).unwrap();
        assert_eq!(s.eigenvalue_mean[0], c(2.0, 0.0));
        assert_eq!(s.eigenvalue_variance.re[0], 2.0);
        assert_eq!(s.eigenvalue_variance.im[0], 0.0);
    }

    #[test]
    fn sampling_distribution_recovered() {
        let mut rng = derived_rng(5, 0);
        let (mu_re, mu_im, sd_re, sd_im) = (-0.5, 2.0, 0.1, 0.3);
        let nre = Normal::new(mu_re, sd_re).unwrap();
        let nim = Normal::new(mu_im, sd_im).unwrap();
        let models: Vec<DmdModel> = (0..100)
            .map(|_| model_with(&[c(nre.sample(&mut rng), nim.sample(&mut rng))]))
            .collect();
        let s = ensemble_statistics(&models).unwrap();
        let k = 100.0f64;
        assert!((s.eigenvalue_mean[0].re - mu_re).abs() < 3.0 * sd_re / k.sqrt());
        assert!((s.eigenvalue_mean[0].im - mu_im).abs() < 3.0 * sd_im / k.sqrt());
        // standard error of a sample variance: σ² √(2/(K−1))
        let se = |sd: f64| sd * sd * (2.0 / (k - 1.0)).sqrt();
        assert!((s.eigenvalue_variance.re[0] - sd_re * sd_re).abs() < 3.0 * se(sd_re));
        assert!((s.eigenvalue_variance.im[0] - sd_im * sd_im).abs() < 3.0 * se(sd_im));
    }

    #[test]
    fn mode_mean_is_normalized() {
        let a = model_with(&[c(1.0, 0.0), c(0.0, 1.0)]);
        let mut b = a.clone();
        b.modes[(0, 0)] += c(0.2, 0.1);
        let b = b.normalized();
        let s = ensemble_statistics(&[a, b]).unwrap();
        for j in 0..2 {
            assert!((s.mode_mean.column(j).norm() - 1.0).abs() < 1e-14);
        }
    }

    #[test]
    fn config_validation() {
        let bag = BagConfig {
            bag_size: 20,
            ..BagConfig::default()
        };
        assert!(bag.validate(100, 3).is_ok());
        assert!(bag.validate(20, 3).is_err());
        let parallel = BagConfig {
            threads: 4,
            ..bag.clone()
        };
        assert!(parallel.validate(100, 3).is_err());
        let one_trial = BagConfig { trials: 1, ..bag };
        assert!(one_trial.validate(100, 3).is_err());
    }
}
