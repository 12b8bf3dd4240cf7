//! Exact DMD: the least-squares propagator between shifted snapshot pairs,
//! projected onto the leading POD modes.
//!
//! Continuous-time eigenvalues are obtained as `ω = log(λ)/Δt` on the
//! principal branch, so frequencies above the Nyquist rate `π/Δt` alias.

use nalgebra::{DMatrix, DVector};

use crate::error::{DmdError, Result};
use crate::linalg::{eigen, pseudo_inverse, singular_values, truncated_svd, RANK_WARNING_RATIO};
use crate::model::DmdModel;
use crate::snapshot::{build_snapshot_pairs, SnapshotMatrix};
use crate::C64;

/// Intermediate spectral quantities of an exact-DMD fit.
#[derive(Debug, Clone)]
pub struct DiscreteOperatorSpectrum {
    /// Eigenvalues `Λ` of the reduced propagator.
    pub discrete_eigenvalues: DVector<C64>,
    /// Eigenvectors `W` of the reduced propagator (unit columns).
    pub reduced_eigenvectors: DMatrix<C64>,
    /// Leading POD modes `U_r`.
    pub pod_basis: DMatrix<C64>,
    pub singular_values: DVector<f64>,
    pub right_vectors: DMatrix<C64>,
    /// The reduced operator `Ã = U_r* X' V_r Σ_r⁻¹`.
    pub reduced_operator: DMatrix<C64>,
    /// Condition number of `W`; large values signal near-repeated eigenvalues.
    pub eigenvector_condition: f64,
    /// Trailing singular value below `1e-12 σ_1`.
    pub rank_deficient: bool,
    pub time_step: f64,
}

/// Least-squares amplitudes plus a flag for a rank-deficient mode matrix.
#[derive(Debug, Clone)]
pub struct AmplitudeFit {
    pub amplitudes: DVector<C64>,
    pub rank_deficient: bool,
}

/// `b = Φ⁺ x₁`, the least-squares amplitudes for one snapshot.
///
/// Singular values of `Φ` below `1e-12 σ_max` are dropped from the
/// pseudo-inverse and reported through [`AmplitudeFit::rank_deficient`].
pub fn amplitudes_from_first_snapshot(modes: &DMatrix<C64>, x1: &DVector<C64>) -> Result<AmplitudeFit> {
    if modes.nrows() != x1.len() {
        return Err(DmdError::ShapeMismatch(format!(
            "modes have {} rows, snapshot has {}",
            modes.nrows(),
            x1.len()
        )));
    }
    let (pinv, rank_deficient) = pseudo_inverse(modes, RANK_WARNING_RATIO);
    if rank_deficient {
        log::warn!("mode matrix is rank deficient; amplitudes are regularized");
    }
    Ok(AmplitudeFit {
        amplitudes: pinv * x1,
        rank_deficient,
    })
}

/// Exact DMD of rank `r` on uniformly sampled snapshots.
///
/// The returned model is in absolute time: `reconstruct(&times)` reproduces
/// the training columns.
pub fn exact_dmd(data: &SnapshotMatrix, r: usize) -> Result<(DmdModel, DiscreteOperatorSpectrum)> {
    let (x, xp) = build_snapshot_pairs(data)?;
    let dt = data.uniform_step()?;
    let max = data.n().min(data.m() - 1);
    if r == 0 {
        return Err(DmdError::InvalidRank(r));
    }
    if r > max {
        return Err(DmdError::RankTooLarge { rank: r, max });
    }

    let svd = truncated_svd(&x, r)?;
    if let Some(index) = svd.singular_values.iter().position(|&s| s == 0.0) {
        return Err(DmdError::RankDeficient { index });
    }
    let mut v_sinv = svd.v.clone();
    for (j, s) in svd.singular_values.iter().enumerate() {
        v_sinv.column_mut(j).scale_mut(1.0 / s);
    }
    let xp_v_sinv = &xp * v_sinv;
    let reduced = svd.u.adjoint() * &xp_v_sinv;
    let eig = eigen(&reduced)?;

    if let Some(k) = eig.values.iter().position(|l| l.norm() == 0.0) {
        return Err(DmdError::DegenerateEigenproblem(format!(
            "discrete eigenvalue {k} is zero; log is undefined"
        )));
    }
    let omegas = eig.values.map(|l| l.ln() / dt);
    let modes = &xp_v_sinv * &eig.vectors;

    let t0 = data.times()[0];
    let fit = amplitudes_from_first_snapshot(&modes, &data.values().column(0).into_owned())?;
    // b was fitted at t0; re-reference it to t = 0
    let amplitudes = DVector::from_iterator(
        r,
        fit.amplitudes.iter().zip(omegas.iter()).map(|(b, w)| b * (-w * t0).exp()),
    );
    let model = DmdModel::new(modes, omegas, amplitudes)?;

    let spectrum = DiscreteOperatorSpectrum {
        discrete_eigenvalues: eig.values,
        reduced_eigenvectors: eig.vectors,
        pod_basis: svd.u,
        singular_values: svd.singular_values,
        right_vectors: svd.v,
        reduced_operator: reduced,
        eigenvector_condition: eig.condition,
        rank_deficient: svd.rank_deficient,
        time_step: dt,
    };
    Ok((model, spectrum))
}

/// Smallest rank capturing `energy` (e.g. 0.9999) of the squared singular
/// values of the snapshot matrix.
pub fn suggest_rank(data: &SnapshotMatrix, energy: f64) -> usize {
    let s = singular_values(data.values());
    let total: f64 = s.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return 1;
    }
    let mut acc = 0.0;
    for (k, v) in s.iter().enumerate() {
        acc += v * v;
        if acc / total >= energy {
            return k + 1;
        }
    }
    s.len()
}
