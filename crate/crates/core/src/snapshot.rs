use nalgebra::{DMatrix, DVector};

use crate::error::{DmdError, Result};
use crate::C64;

/// Relative tolerance on the spread of time steps for uniform sampling.
pub const UNIFORM_SPACING_TOL: f64 = 1e-8;

/// Snapshots of a state vector: one column per sample time.
///
/// Construction validates that the times are finite and strictly increasing,
/// that there is at least one row and two columns, and that every entry is
/// finite. Non-uniform sampling is allowed; only [`exact_dmd`] needs a single
/// time step.
///
/// [`exact_dmd`]: crate::exact::exact_dmd
#[derive(Debug, Clone, PartialEq)]
pub struct SnapshotMatrix {
    values: DMatrix<C64>,
    times: DVector<f64>,
}

impl SnapshotMatrix {
    pub fn new(values: DMatrix<C64>, times: DVector<f64>) -> Result<Self> {
        if values.nrows() < 1 {
            return Err(DmdError::InvalidSnapshots("need at least one row".into()));
        }
        if values.ncols() < 2 {
            return Err(DmdError::InvalidSnapshots("need at least two snapshots".into()));
        }
        if times.len() != values.ncols() {
            return Err(DmdError::ShapeMismatch(format!(
                "{} sample times for {} snapshots",
                times.len(),
                values.ncols()
            )));
        }
        if let Some(k) = times.iter().position(|t| !t.is_finite()) {
            return Err(DmdError::InvalidSnapshots(format!("time {k} is not finite")));
        }
        if let Some(k) = (1..times.len()).find(|&k| times[k] <= times[k - 1]) {
            return Err(DmdError::NonIncreasingTimes { column: k });
        }
        if values.iter().any(|z| !z.re.is_finite() || !z.im.is_finite()) {
            return Err(DmdError::InvalidSnapshots("non-finite value".into()));
        }
        Ok(Self { values, times })
    }

    /// Real-valued snapshots.
    pub fn from_real(values: &DMatrix<f64>, times: DVector<f64>) -> Result<Self> {
        Self::new(values.map(|v| C64::new(v, 0.0)), times)
    }

    pub fn values(&self) -> &DMatrix<C64> {
        &self.values
    }

    pub fn times(&self) -> &DVector<f64> {
        &self.times
    }

    /// Number of spatial samples (rows).
    pub fn n(&self) -> usize {
        self.values.nrows()
    }

    /// Number of snapshots (columns).
    pub fn m(&self) -> usize {
        self.values.ncols()
    }

    pub fn span(&self) -> f64 {
        self.times[self.m() - 1] - self.times[0]
    }

    /// True when every entry has zero imaginary part.
    pub fn is_real(&self) -> bool {
        self.values.iter().all(|z| z.im == 0.0)
    }

    /// The common time step, or [`DmdError::NonUniformSampling`].
    pub fn uniform_step(&self) -> Result<f64> {
        let dt = self.span() / (self.m() - 1) as f64;
        for k in 1..self.m() {
            let step = self.times[k] - self.times[k - 1];
            if (step - dt).abs() > UNIFORM_SPACING_TOL * dt.abs() {
                return Err(DmdError::NonUniformSampling {
                    index: k,
                    step,
                    expected: dt,
                });
            }
        }
        Ok(dt)
    }

    /// Bounds `start..end` of the longest run of consecutive snapshots with
    /// a common time step (the earliest such run on ties).
    pub fn longest_uniform_run(&self) -> (usize, usize) {
        let m = self.m();
        let mut best = (0, 2);
        let mut start = 0;
        for k in 2..m {
            let h0 = self.times[start + 1] - self.times[start];
            let step = self.times[k] - self.times[k - 1];
            if (step - h0).abs() > UNIFORM_SPACING_TOL * h0 {
                start = k - 1;
            }
            if k + 1 - start > best.1 - best.0 {
                best = (start, k + 1);
            }
        }
        best
    }

    /// Sub-selection of columns; `indices` must be strictly increasing.
    pub fn select_columns(&self, indices: &[usize]) -> Result<Self> {
        if let Some(&k) = indices.iter().find(|&&k| k >= self.m()) {
            return Err(DmdError::ShapeMismatch(format!(
                "column {k} out of range for {} snapshots",
                self.m()
            )));
        }
        let values = self.values.select_columns(indices);
        let times = DVector::from_iterator(indices.len(), indices.iter().map(|&k| self.times[k]));
        Self::new(values, times)
    }

    /// Consecutive columns `start..end`.
    pub fn window(&self, start: usize, end: usize) -> Result<Self> {
        let idx: Vec<usize> = (start..end).collect();
        self.select_columns(&idx)
    }
}

/// Splits uniformly sampled snapshots into the shifted pair `(X, X')`.
///
/// `X` holds columns `0..m-1` and `X'` columns `1..m`.
pub fn build_snapshot_pairs(data: &SnapshotMatrix) -> Result<(DMatrix<C64>, DMatrix<C64>)> {
    data.uniform_step()?;
    let m = data.m();
    let x = data.values.columns(0, m - 1).into_owned();
    let xp = data.values.columns(1, m - 1).into_owned();
    Ok((x, xp))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn longest_run_found() {
        let t = [0.0, 1.0, 3.0, 4.0, 5.0, 6.0, 8.0, 9.0];
        let data = row(&[0.0; 8], &t).unwrap();
        assert_eq!(data.longest_uniform_run(), (2, 6));
        let uniform = row(&[0.0; 3], &[0.0, 0.5, 1.0]).unwrap();
        assert_eq!(uniform.longest_uniform_run(), (0, 3));
    }

    fn row(values: &[f64], times: &[f64]) -> Result<SnapshotMatrix> {
        SnapshotMatrix::from_real(
            &DMatrix::from_row_slice(1, values.len(), values),
            DVector::from_row_slice(times),
        )
    }

    #[test]
    fn pairs_of_three_snapshots() {
        let data = row(&[1.0, 2.0, 4.0], &[0.0, 1.0, 2.0]).unwrap();
        let (x, xp) = build_snapshot_pairs(&data).unwrap();
        assert_eq!(x.ncols(), 2);
        assert_eq!(x[(0, 0)].re, 1.0);
        assert_eq!(x[(0, 1)].re, 2.0);
        assert_eq!(xp[(0, 0)].re, 2.0);
        assert_eq!(xp[(0, 1)].re, 4.0);
    }

    #[test]
    fn pairs_of_two_snapshots() {
        let data = row(&[1.0, 3.0], &[0.0, 0.5]).unwrap();
        let (x, xp) = build_snapshot_pairs(&data).unwrap();
        assert_eq!((x.ncols(), xp.ncols()), (1, 1));
    }

    #[test]
    fn uneven_times_are_rejected() {
        let data = row(&[1.0, 2.0, 4.0], &[0.0, 1.0, 2.5]).unwrap();
        assert!(matches!(
            build_snapshot_pairs(&data),
            Err(DmdError::NonUniformSampling { .. })
        ));
    }

    #[test]
    fn invariants_enforced() {
        assert!(matches!(
            row(&[1.0, 2.0], &[1.0, 1.0]),
            Err(DmdError::NonIncreasingTimes { column: 1 })
        ));
        assert!(row(&[1.0], &[0.0]).is_err());
        assert!(row(&[1.0, f64::NAN], &[0.0, 1.0]).is_err());
        assert!(row(&[1.0, 2.0], &[0.0]).is_err());
    }
}
