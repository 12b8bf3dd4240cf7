use nalgebra::{DMatrix, DVector};

use super::projection::{JacobianFactors, Projection};
use super::{ConvergenceReport, SolverConfig, TerminationReason};
use crate::error::{DmdError, Result};
use crate::exact::exact_dmd;
use crate::model::DmdModel;
use crate::snapshot::SnapshotMatrix;
use crate::C64;

/// Consecutive rejected steps after which the iterate is considered stalled.
const MAX_REJECTIONS: usize = 60;

/// Marquardt scaling uses `max(G_aa, DAMPING_FLOOR · max_b G_bb)`, so a
/// parameter whose sensitivity has collapsed (a mode decaying within one
/// sample) cannot take unbounded steps.
const DAMPING_FLOOR: f64 = 1e-6;

/// Default starting eigenvalues: those of exact DMD at the same rank.
///
/// Non-uniformly sampled data fall back to exact DMD on the longest run of
/// equally spaced snapshots, provided it holds at least `r + 1` of them.
pub fn initialize_eigenvalues(data: &SnapshotMatrix, r: usize) -> Result<DVector<C64>> {
    match data.uniform_step() {
        Ok(_) => Ok(exact_dmd(data, r)?.0.eigenvalues),
        Err(err) => {
            let (start, end) = data.longest_uniform_run();
            if end - start < r + 1 {
                return Err(err);
            }
            Ok(exact_dmd(&data.window(start, end)?, r)?.0.eigenvalues)
        }
    }
}

fn unpack(theta: &DVector<f64>) -> Vec<C64> {
    let r = theta.len() / 2;
    (0..r).map(|j| C64::new(theta[j], theta[r + j])).collect()
}

fn pack(omegas: &[C64]) -> DVector<f64> {
    let r = omegas.len();
    DVector::from_fn(2 * r, |i, _| if i < r { omegas[i].re } else { omegas[i - r].im })
}

/// Largest `|g_a| / (‖J_a‖ ‖R‖)` over parameters.
fn gradient_cosine(gram: &DMatrix<f64>, grad: &DVector<f64>, cost: f64) -> f64 {
    let rnorm = cost.sqrt();
    (0..grad.len())
        .map(|a| {
            let jn = gram[(a, a)].sqrt();
            if jn == 0.0 || rnorm == 0.0 {
                0.0
            } else {
                grad[a].abs() / (jn * rnorm)
            }
        })
        .fold(0.0, f64::max)
}

struct Outcome {
    omegas: Vec<C64>,
    report: ConvergenceReport,
}

fn levenberg_marquardt(
    x: &DMatrix<C64>,
    times: &[f64],
    init: &[C64],
    config: &SolverConfig,
    real_cap: f64,
) -> Result<Outcome> {
    let x_norm2 = x.norm_squared();
    let mut theta = pack(init);
    let mut current = Projection::new(x, init, times, config.pinv_threshold)?;
    let mut cost = current.cost();
    let mut history = vec![cost];
    let mut lambda = config.marquardt_lambda_init;
    let mut iterations = 0;

    let residual_small = |c: f64| c <= config.residual_tolerance.powi(2) * x_norm2;
    let capped = |w: &[C64]| w.iter().any(|z| z.re > real_cap);

    let reason = loop {
        if residual_small(cost) {
            break TerminationReason::ResidualTol;
        }
        if iterations >= config.max_iterations {
            break TerminationReason::MaxIters;
        }
        let factors = JacobianFactors::new(&current, times);
        let (gram, grad) = factors.normal_equations(&current.residual);
        if gradient_cosine(&gram, &grad, cost) <= config.gradient_tolerance {
            break TerminationReason::GradientTol;
        }
        iterations += 1;

        let max_diag = gram.diagonal().max();
        let floor = DAMPING_FLOOR * max_diag.max(f64::MIN_POSITIVE);
        let mut accepted = None;
        for _ in 0..MAX_REJECTIONS {
            let mut damped = gram.clone();
            for a in 0..damped.nrows() {
                damped[(a, a)] += lambda * gram[(a, a)].max(floor);
            }
            let step = match damped.cholesky() {
                Some(ch) => -ch.solve(&grad),
                None => {
                    lambda *= config.marquardt_scale;
                    continue;
                }
            };
            let candidate = &theta + &step;
            let omegas = unpack(&candidate);
            match Projection::new(x, &omegas, times, config.pinv_threshold) {
                Ok(p) if p.cost().is_finite() && p.cost() < cost => {
                    lambda /= config.marquardt_scale;
                    accepted = Some((candidate, p, step));
                    break;
                }
                _ => lambda *= config.marquardt_scale,
            }
        }
        let Some((candidate, p, step)) = accepted else {
            break TerminationReason::StepTol;
        };
        let step_norm = step.norm();
        theta = candidate;
        current = p;
        cost = current.cost();
        history.push(cost);

        if residual_small(cost) {
            break TerminationReason::ResidualTol;
        }
        if step_norm <= config.step_tolerance * (theta.norm() + config.step_tolerance) {
            break TerminationReason::StepTol;
        }
    };

    let omegas = unpack(&theta);
    let reason = if capped(&omegas) {
        TerminationReason::Diverged
    } else {
        reason
    };
    let (_, grad) = JacobianFactors::new(&current, times).normal_equations(&current.residual);
    let converged = !matches!(reason, TerminationReason::MaxIters | TerminationReason::Diverged);
    Ok(Outcome {
        omegas,
        report: ConvergenceReport {
            converged,
            iterations,
            final_cost: cost,
            gradient_norm: grad.norm(),
            termination_reason: reason,
            cost_history: history,
        },
    })
}

/// Greedy post-hoc pairing of eigenvalues into complex-conjugate pairs.
///
/// Candidate pairings `(j, k)` are taken in order of `|ω_j − conj(ω_k)|`;
/// an eigenvalue paired with itself is projected onto the real axis, and
/// a pair is replaced by the symmetric average `(ω_j + conj ω_k)/2` and its
/// conjugate.
pub fn pair_conjugates(omegas: &[C64]) -> Vec<C64> {
    let r = omegas.len();
    let mut candidates = Vec::new();
    for j in 0..r {
        for k in j..r {
            candidates.push(((omegas[j] - omegas[k].conj()).norm(), j, k));
        }
    }
    candidates.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut out = omegas.to_vec();
    let mut used = vec![false; r];
    for (_, j, k) in candidates {
        if used[j] || used[k] {
            continue;
        }
        if j == k {
            out[j] = C64::new(omegas[j].re, 0.0);
            used[j] = true;
        } else {
            let mean = (omegas[j] + omegas[k].conj()) / 2.0;
            out[j] = mean;
            out[k] = mean.conj();
            used[j] = true;
            used[k] = true;
        }
    }
    out
}

/// Fits `X ≈ Φ diag(b) T(ω)` by variable projection.
///
/// Without `init_omegas` the iteration is seeded by
/// [`initialize_eigenvalues`]; with a seed, arbitrary sample times are
/// accepted. Non-convergence is reported, not raised.
pub fn optimized_dmd(
    data: &SnapshotMatrix,
    r: usize,
    init_omegas: Option<&DVector<C64>>,
    config: &SolverConfig,
) -> Result<(DmdModel, ConvergenceReport)> {
    config.validate()?;
    if r == 0 {
        return Err(DmdError::InvalidRank(r));
    }
    let max = data.n().min(data.m());
    if r > max {
        return Err(DmdError::RankTooLarge { rank: r, max });
    }
    let init = match init_omegas {
        Some(w) if w.len() != r => {
            return Err(DmdError::ShapeMismatch(format!(
                "{} initial eigenvalues for rank {r}",
                w.len()
            )))
        }
        Some(w) => w.clone(),
        None => initialize_eigenvalues(data, r)?,
    };

    // work on a clock starting at the first sample
    let t0 = data.times()[0];
    let times: Vec<f64> = data.times().iter().map(|t| t - t0).collect();
    let real_cap = config.eigenvalue_real_cap.unwrap_or(8.0 / data.span());
    let x = data.values();

    let Outcome { mut omegas, mut report } = levenberg_marquardt(x, &times, init.as_slice(), config, real_cap)?;

    if config.enforce_conjugate_pairs && data.is_real() {
        omegas = pair_conjugates(&omegas);
        let p = Projection::new(x, &omegas, &times, config.pinv_threshold)?;
        report.final_cost = p.cost();
    }
    let p = Projection::new(x, &omegas, &times, config.pinv_threshold)?;
    let model = DmdModel::from_scaled_modes(p.scaled_modes, DVector::from_vec(omegas))?.shift_origin(-t0);
    Ok((model, report))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::time_dynamics_matrix;

    fn c(re: f64, im: f64) -> C64 {
        C64::new(re, im)
    }

    #[test]
    fn pairing_symmetrizes() {
        let w = [c(0.01, 2.0), c(-0.5, 0.001), c(-0.01, -2.02)];
        let p = pair_conjugates(&w);
        assert_eq!(p[1].im, 0.0);
        assert_eq!(p[0], p[2].conj());
        assert!((p[0] - c(0.0, 2.01)).norm() < 1e-12);
    }

    #[test]
    fn scalar_decay_needs_no_seed() {
        let times: Vec<f64> = (0..8).map(|k| k as f64).collect();
        let values = DMatrix::from_fn(1, 8, |_, k| c(0.5f64.powi(k as i32), 0.0));
        let data = SnapshotMatrix::new(values, DVector::from_row_slice(&times)).unwrap();
        let (model, report) = optimized_dmd(&data, 1, None, &SolverConfig::default()).unwrap();
        assert!(report.converged);
        assert!((model.eigenvalues[0] - c(0.5f64.ln(), 0.0)).norm() < 1e-10);
    }

    #[test]
    fn recovers_from_rough_seed() {
        let omegas = [c(-0.3, 2.0), c(0.0, -1.0)];
        let times: Vec<f64> = (0..40).map(|k| k as f64 * 0.1).collect();
        let b = DMatrix::from_fn(3, 2, |i, j| c(1.0 + i as f64 * 0.5, j as f64 - 0.5 * i as f64));
        let x = &b * time_dynamics_matrix(&omegas, &times).unwrap();
        let data = SnapshotMatrix::new(x, DVector::from_row_slice(&times)).unwrap();
        let seed = DVector::from_vec(vec![c(-0.2, 1.8), c(0.1, -1.15)]);
        let (model, report) = optimized_dmd(&data, 2, Some(&seed), &SolverConfig::default()).unwrap();
        assert!(report.converged, "{report:?}");
        assert!((model.eigenvalues[0] - omegas[0]).norm() < 1e-8);
        assert!((model.eigenvalues[1] - omegas[1]).norm() < 1e-8);
        for w in report.cost_history.windows(2) {
            assert!(w[1] <= w[0]);
        }
    }

    #[test]
    fn rank_above_snapshot_count_fails() {
        let data = SnapshotMatrix::new(DMatrix::from_element(4, 3, c(1.0, 0.0)), DVector::from_row_slice(&[0.0, 1.0, 2.0]))
            .unwrap();
        assert!(optimized_dmd(&data, 4, None, &SolverConfig::default()).is_err());
        assert!(matches!(
            optimized_dmd(&data, 0, None, &SolverConfig::default()),
            Err(DmdError::InvalidRank(0))
        ));
    }
}
