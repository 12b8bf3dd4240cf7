//! Dense complex linear algebra used by the decompositions.
//!
//! Everything here works on `nalgebra` dynamic matrices over [`C64`]. The
//! SVD and Schur factorizations come from nalgebra; eigenvectors are
//! recovered from the triangular Schur factor by back substitution.

use nalgebra::{DMatrix, DVector, Schur};

use crate::error::{DmdError, Result};
use crate::C64;

/// Relative cutoff below which the trailing singular value is flagged.
pub const RANK_WARNING_RATIO: f64 = 1e-12;

/// Rank-r factors of `X ≈ U_r Σ_r V_r*`.
#[derive(Debug, Clone)]
pub struct TruncatedSvd {
    /// Left singular vectors, n×r, orthonormal columns.
    pub u: DMatrix<C64>,
    /// The r largest singular values in non-increasing order.
    pub singular_values: DVector<f64>,
    /// Right singular vectors, m×r, orthonormal columns.
    pub v: DMatrix<C64>,
    /// Set when σ_r / σ_1 < 1e-12.
    pub rank_deficient: bool,
}

impl TruncatedSvd {
    /// `U_r Σ_r V_r*`.
    pub fn recompose(&self) -> DMatrix<C64> {
        let mut us = self.u.clone();
        for (j, s) in self.singular_values.iter().enumerate() {
            us.column_mut(j).scale_mut(*s);
        }
        us * self.v.adjoint()
    }
}

/// Full thin SVD sorted by decreasing singular value.
fn sorted_svd(x: &DMatrix<C64>) -> (DMatrix<C64>, Vec<f64>, DMatrix<C64>) {
    let svd = x.clone().svd(true, true);
    let u = svd.u.expect("u requested");
    let v = svd.v_t.expect("v_t requested").adjoint();
    let s = svd.singular_values;

    let mut order: Vec<usize> = (0..s.len()).collect();
    order.sort_by(|&a, &b| s[b].total_cmp(&s[a]));

    let u = DMatrix::from_fn(u.nrows(), order.len(), |i, j| u[(i, order[j])]);
    let v = DMatrix::from_fn(v.nrows(), order.len(), |i, j| v[(i, order[j])]);
    let s = order.iter().map(|&k| s[k]).collect();
    (u, s, v)
}

/// Rank-r truncated singular value decomposition.
///
/// Fails with [`DmdError::RankTooLarge`] when `r > min(n, m)`; a numerically
/// rank-deficient truncation is reported through
/// [`TruncatedSvd::rank_deficient`] rather than as an error.
pub fn truncated_svd(x: &DMatrix<C64>, r: usize) -> Result<TruncatedSvd> {
    let max = x.nrows().min(x.ncols());
    if r == 0 {
        return Err(DmdError::InvalidRank(r));
    }
    if r > max {
        return Err(DmdError::RankTooLarge { rank: r, max });
    }
    if x.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(DmdError::InvalidSnapshots("matrix has non-finite entries".into()));
    }

    let (u, s, v) = sorted_svd(x);
    let rank_deficient = s[0] == 0.0 || s[r - 1] / s[0] < RANK_WARNING_RATIO;
    if rank_deficient {
        log::warn!("rank-{r} truncation is numerically rank deficient");
    }
    Ok(TruncatedSvd {
        u: u.columns(0, r).into_owned(),
        singular_values: DVector::from_iterator(r, s.into_iter().take(r)),
        v: v.columns(0, r).into_owned(),
        rank_deficient,
    })
}

/// All singular values in non-increasing order.
pub fn singular_values(x: &DMatrix<C64>) -> Vec<f64> {
    let mut s: Vec<f64> = x.singular_values().iter().copied().collect();
    s.sort_by(|a, b| b.total_cmp(a));
    s
}

/// Moore–Penrose pseudo-inverse with a relative singular-value cutoff.
///
/// Singular values `≤ threshold · σ_max` contribute nothing. The flag is
/// true when at least one value was cut.
pub fn pseudo_inverse(a: &DMatrix<C64>, threshold: f64) -> (DMatrix<C64>, bool) {
    let (u, s, v) = sorted_svd(a);
    let cut = threshold * s.first().copied().unwrap_or(0.0);
    let mut vs = v;
    let mut truncated = false;
    for (j, &sj) in s.iter().enumerate() {
        if sj > cut && sj > 0.0 {
            vs.column_mut(j).scale_mut(1.0 / sj);
        } else {
            vs.column_mut(j).fill(C64::new(0.0, 0.0));
            truncated = true;
        }
    }
    (vs * u.adjoint(), truncated)
}

/// Eigenpairs of a small square matrix.
#[derive(Debug, Clone)]
pub struct Eigen {
    pub values: DVector<C64>,
    /// Unit-norm eigenvectors as columns.
    pub vectors: DMatrix<C64>,
    /// 2-norm condition number of the eigenvector matrix.
    pub condition: f64,
}

/// Eigendecomposition `A W = W Λ` of a complex square matrix.
pub fn eigen(a: &DMatrix<C64>) -> Result<Eigen> {
    let r = a.nrows();
    if r != a.ncols() {
        return Err(DmdError::ShapeMismatch(format!(
            "eigendecomposition needs a square matrix, got {}x{}",
            r,
            a.ncols()
        )));
    }
    if a.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
        return Err(DmdError::DegenerateEigenproblem("non-finite operator".into()));
    }
    let schur = Schur::try_new(a.clone(), f64::EPSILON, 10_000).ok_or_else(|| {
        DmdError::DegenerateEigenproblem("Schur iteration did not converge".into())
    })?;
    let (q, t) = schur.unpack();

    let scale = t.norm().max(f64::MIN_POSITIVE);
    let tiny = f64::EPSILON * scale;
    let mut y = DMatrix::<C64>::zeros(r, r);
    for k in 0..r {
        let lambda = t[(k, k)];
        y[(k, k)] = C64::new(1.0, 0.0);
        for i in (0..k).rev() {
            let mut acc = C64::new(0.0, 0.0);
            for j in (i + 1)..=k {
                acc += t[(i, j)] * y[(j, k)];
            }
            let mut d = t[(i, i)] - lambda;
            // repeated eigenvalue: perturb the pivot instead of dividing by zero
            if d.norm() < tiny {
                d = C64::new(tiny, 0.0);
            }
            y[(i, k)] = -acc / d;
        }
    }
    let mut vectors = q * y;
    for mut col in vectors.column_iter_mut() {
        let nrm = col.norm();
        if nrm > 0.0 {
            col.scale_mut(1.0 / nrm);
        }
    }
    let sv = singular_values(&vectors);
    let condition = match sv.last() {
        Some(&smin) if smin > 0.0 => sv[0] / smin,
        _ => f64::INFINITY,
    };
    Ok(Eigen {
        values: t.diagonal(),
        vectors,
        condition,
    })
}

/// Frobenius norm of a complex matrix.
pub fn frobenius(a: &DMatrix<C64>) -> f64 {
    a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_matrix(rows: usize, cols: usize, seed: u64) -> DMatrix<C64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        DMatrix::from_fn(rows, cols, |_, _| {
            C64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn identity_singular_values() {
        let id = DMatrix::<C64>::identity(3, 3);
        let svd = truncated_svd(&id, 3).unwrap();
        for s in svd.singular_values.iter() {
            assert!((s - 1.0).abs() < 1e-14);
        }
        assert!(!svd.rank_deficient);
    }

    #[test]
    fn rank_one_outer_product() {
        let u = DVector::from_vec(vec![C64::new(1.0, 2.0), C64::new(-0.5, 0.0), C64::new(0.0, 3.0)]);
        let v = DVector::from_vec(vec![C64::new(2.0, -1.0), C64::new(0.25, 0.5)]);
        let x = &u * v.adjoint();
        let svd = truncated_svd(&x, 1).unwrap();
        assert!((svd.singular_values[0] - u.norm() * v.norm()).abs() < 1e-12);
        assert!(frobenius(&(x - svd.recompose())) < 1e-12);
    }

    #[test]
    fn full_rank_recomposition() {
        let x = random_matrix(10, 8, 3);
        let svd = truncated_svd(&x, 8).unwrap();
        let rel = frobenius(&(&x - svd.recompose())) / frobenius(&x);
        assert!(rel <= 1e-10, "relative error {rel}");
        let gram = svd.u.adjoint() * &svd.u;
        assert!(frobenius(&(gram - DMatrix::identity(8, 8))) < 1e-10);
        for w in svd.singular_values.as_slice().windows(2) {
            assert!(w[0] >= w[1]);
        }
    }

    #[test]
    fn truncation_is_eckart_young_optimal() {
        let x = random_matrix(7, 9, 11);
        let all = singular_values(&x);
        let svd = truncated_svd(&x, 3).unwrap();
        let err = frobenius(&(&x - svd.recompose()));
        let tail: f64 = all[3..].iter().map(|s| s * s).sum::<f64>().sqrt();
        assert!((err - tail).abs() < 1e-10);
    }

    #[test]
    fn rank_errors() {
        let x = random_matrix(3, 4, 1);
        assert!(matches!(truncated_svd(&x, 4), Err(DmdError::RankTooLarge { .. })));
        assert!(matches!(truncated_svd(&x, 0), Err(DmdError::InvalidRank(0))));
    }

    #[test]
    fn rank_deficient_is_flagged() {
        let u = DVector::from_vec(vec![C64::new(1.0, 0.0), C64::new(2.0, 0.0)]);
        let x = &u * u.adjoint();
        assert!(truncated_svd(&x, 2).unwrap().rank_deficient);
    }

    #[test]
    fn eigen_recovers_diagonalizable() {
        let p = random_matrix(4, 4, 5);
        let lambdas = [
            C64::new(0.5, 0.1),
            C64::new(-0.3, 0.0),
            C64::new(0.9, -0.4),
            C64::new(0.0, 1.2),
        ];
        let d = DMatrix::from_diagonal(&DVector::from_row_slice(&lambdas));
        let a = &p * d * p.clone().try_inverse().unwrap();
        let e = eigen(&a).unwrap();
        let residual = &a * &e.vectors - &e.vectors * DMatrix::from_diagonal(&e.values);
        assert!(frobenius(&residual) < 1e-10);
        for l in lambdas {
            assert!(e.values.iter().any(|v| (v - l).norm() < 1e-10));
        }
        assert!(e.condition.is_finite());
    }

    #[test]
    fn pseudo_inverse_cuts_null_directions() {
        let mut t = random_matrix(3, 6, 2);
        t.row_mut(1).fill(C64::new(0.0, 0.0));
        let (pinv, truncated) = pseudo_inverse(&t, 1e-12);
        assert!(truncated);
        assert!(pinv.column(1).norm() <= 1e-14 * pinv.norm());
    }
}
