//! The exponential model `x(t) = Σ_j φ_j e^{ω_j t} b_j` shared by every
//! fitting method.

use nalgebra::{DMatrix, DVector};

use crate::error::{DmdError, Result};
use crate::linalg::frobenius;
use crate::C64;

/// Largest admissible `Re(ω)·t` before `exp` is considered to overflow.
pub const MAX_EXPONENT: f64 = 700.0;

/// Rank-r DMD model: unit-norm modes, continuous-time eigenvalues and
/// amplitudes.
///
/// Modes obey a gauge convention: each column has unit Euclidean norm and
/// its largest-magnitude entry is real and non-negative. The magnitude and
/// phase removed from the column live in the matching amplitude.
#[derive(Debug, Clone, PartialEq)]
pub struct DmdModel {
    pub modes: DMatrix<C64>,
    pub eigenvalues: DVector<C64>,
    pub amplitudes: DVector<C64>,
}

impl DmdModel {
    /// Builds a model and brings it into the mode convention.
    pub fn new(modes: DMatrix<C64>, eigenvalues: DVector<C64>, amplitudes: DVector<C64>) -> Result<Self> {
        let r = eigenvalues.len();
        if modes.ncols() != r || amplitudes.len() != r {
            return Err(DmdError::ShapeMismatch(format!(
                "{} modes, {} eigenvalues, {} amplitudes",
                modes.ncols(),
                r,
                amplitudes.len()
            )));
        }
        if r > modes.nrows() {
            return Err(DmdError::RankTooLarge {
                rank: r,
                max: modes.nrows(),
            });
        }
        Ok(Self {
            modes,
            eigenvalues,
            amplitudes,
        }
        .normalized())
    }

    /// Splits scaled modes `Φ_b = Φ diag(b)` into unit modes and amplitudes.
    pub fn from_scaled_modes(scaled: DMatrix<C64>, eigenvalues: DVector<C64>) -> Result<Self> {
        let r = scaled.ncols();
        Self::new(scaled, eigenvalues, DVector::from_element(r, C64::new(1.0, 0.0)))
    }

    pub fn rank(&self) -> usize {
        self.eigenvalues.len()
    }

    pub fn n(&self) -> usize {
        self.modes.nrows()
    }

    /// `Φ diag(b)`.
    pub fn scaled_modes(&self) -> DMatrix<C64> {
        let mut out = self.modes.clone();
        for (j, b) in self.amplitudes.iter().enumerate() {
            for z in out.column_mut(j).iter_mut() {
                *z *= b;
            }
        }
        out
    }

    /// Applies the unit-norm / real-pivot convention to every column.
    ///
    /// Columns that already satisfy it are left bit-for-bit untouched, so the
    /// operation is idempotent.
    pub fn normalized(mut self) -> Self {
        for j in 0..self.rank() {
            let (mode, amp) = normalize_column(self.modes.column(j).into_owned(), self.amplitudes[j]);
            self.modes.set_column(j, &mode);
            self.amplitudes[j] = amp;
        }
        self
    }

    /// Reorders the columns: entry `k` of the result is column `perm[k]`.
    pub fn permuted(&self, perm: &[usize]) -> Self {
        Self {
            modes: self.modes.select_columns(perm),
            eigenvalues: DVector::from_iterator(perm.len(), perm.iter().map(|&k| self.eigenvalues[k])),
            amplitudes: DVector::from_iterator(perm.len(), perm.iter().map(|&k| self.amplitudes[k])),
        }
    }

    /// Re-expresses the amplitudes for a clock whose origin moved by `tau`:
    /// `b_j ← b_j e^{ω_j τ}`.
    pub fn shift_origin(&self, tau: f64) -> Self {
        let mut out = self.clone();
        for (b, w) in out.amplitudes.iter_mut().zip(self.eigenvalues.iter()) {
            *b *= (w * tau).exp();
        }
        out
    }

    /// Evaluates the model, one column per requested time:
    /// `Φ diag(b) T(ω)`.
    pub fn reconstruct(&self, times: &[f64]) -> Result<DMatrix<C64>> {
        let dynamics = time_dynamics_matrix(self.eigenvalues.as_slice(), times)?;
        Ok(self.scaled_modes() * dynamics)
    }
}

fn normalize_column(mut col: DVector<C64>, amp: C64) -> (DVector<C64>, C64) {
    let norm = col.norm();
    if norm == 0.0 {
        let mut unit = DVector::zeros(col.len());
        unit[0] = C64::new(1.0, 0.0);
        return (unit, C64::new(0.0, 0.0));
    }
    let pivot = pivot_index(&col);
    let p = col[pivot];
    if (norm - 1.0).abs() <= 4.0 * f64::EPSILON && p.im == 0.0 && p.re >= 0.0 {
        return (col, amp);
    }
    let phase = p / p.norm();
    let factor = phase * norm;
    for z in col.iter_mut() {
        *z /= factor;
    }
    col[pivot] = C64::new(col[pivot].norm(), 0.0);
    (col, amp * factor)
}

fn pivot_index(col: &DVector<C64>) -> usize {
    let mut best = 0;
    let mut best_mag = -1.0;
    for (i, z) in col.iter().enumerate() {
        let mag = z.norm_sqr();
        if mag > best_mag {
            best = i;
            best_mag = mag;
        }
    }
    best
}

/// Vandermonde-like dynamics matrix `T(ω)` with entries `e^{ω_j t_k}`.
///
/// Returns [`DmdError::EigenvalueOverflow`] if any `Re(ω_j)·t_k` exceeds 700.
pub fn time_dynamics_matrix(omegas: &[C64], times: &[f64]) -> Result<DMatrix<C64>> {
    let mut t = DMatrix::zeros(omegas.len(), times.len());
    for (j, w) in omegas.iter().enumerate() {
        for (k, &tk) in times.iter().enumerate() {
            let exponent = w.re * tk;
            if exponent > MAX_EXPONENT || !exponent.is_finite() {
                return Err(DmdError::EigenvalueOverflow { exponent });
            }
            t[(j, k)] = (w * tk).exp();
        }
    }
    Ok(t)
}

/// `‖X − X̂‖_F / ‖X‖_F`.
pub fn relative_error(x: &DMatrix<C64>, xhat: &DMatrix<C64>) -> Result<f64> {
    if x.shape() != xhat.shape() {
        return Err(DmdError::ShapeMismatch(format!(
            "{:?} vs {:?}",
            x.shape(),
            xhat.shape()
        )));
    }
    let reference = frobenius(x);
    if reference == 0.0 {
        return Err(DmdError::ZeroReference);
    }
    Ok(frobenius(&(x - xhat)) / reference)
}
