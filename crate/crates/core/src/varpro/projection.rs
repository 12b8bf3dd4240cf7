//! The separable least-squares problem `min ‖X − Φ_b T(ω)‖_F`.
//!
//! For fixed `ω` the optimal `Φ_b` is `X T⁺`, leaving the projected residual
//! `R(ω) = X (I − T⁺T)`. Because `T⁺` involves `conj(T)`, `R` is not
//! holomorphic in `ω`: its derivatives with respect to `Re ω_j` and `Im ω_j`
//! are independent, and both are returned.
//!
//! With `P⊥ = I − T⁺T`, `d_j` the row `(t_k e^{ω_j t_k})_k` and `φ_j` the
//! j-th column of `Φ_b`, the projected residual has the derivatives
//!
//! ```text
//! ∂R/∂Re ω_j = −g_j h_jᵀ − φ_j a_jᵀ
//! ∂R/∂Im ω_j =  i g_j h_jᵀ − i φ_j a_jᵀ
//! ```
//!
//! where `g_j = R conj(d_j)`, `h_j = conj(T⁺[:, j])` and `a_j = d_j P⊥`.

use nalgebra::{DMatrix, DVector};

use crate::error::Result;
use crate::linalg::pseudo_inverse;
use crate::model::time_dynamics_matrix;
use crate::C64;

/// `Φ_b = X T⁺`, the minimizer of `‖X − Φ_b T‖_F` for fixed `T`.
pub fn solve_linear_stage(x: &DMatrix<C64>, t: &DMatrix<C64>, pinv_threshold: f64) -> DMatrix<C64> {
    let (pinv, _) = pseudo_inverse(t, pinv_threshold);
    x * pinv
}

/// Linear-stage solution and residual at one `ω`.
#[derive(Debug, Clone)]
pub(crate) struct Projection {
    pub dynamics: DMatrix<C64>,
    pub pinv: DMatrix<C64>,
    pub scaled_modes: DMatrix<C64>,
    pub residual: DMatrix<C64>,
}

impl Projection {
    pub fn new(x: &DMatrix<C64>, omegas: &[C64], times: &[f64], pinv_threshold: f64) -> Result<Self> {
        let dynamics = time_dynamics_matrix(omegas, times)?;
        let (pinv, _) = pseudo_inverse(&dynamics, pinv_threshold);
        let scaled_modes = x * &pinv;
        let residual = x - &scaled_modes * &dynamics;
        Ok(Self {
            dynamics,
            pinv,
            scaled_modes,
            residual,
        })
    }

    pub fn cost(&self) -> f64 {
        self.residual.norm_squared()
    }
}

/// Squared Frobenius norm of the projected residual, and the residual.
pub fn varpro_cost(
    x: &DMatrix<C64>,
    omegas: &[C64],
    times: &[f64],
    pinv_threshold: f64,
) -> Result<(f64, DMatrix<C64>)> {
    let p = Projection::new(x, omegas, times, pinv_threshold)?;
    Ok((p.cost(), p.residual))
}

/// Derivatives of the flattened projected residual.
///
/// The residual is flattened column-major (entry `(i, k)` at `i + n·k`).
/// Column `j` of `wrt_re` (`wrt_im`) is the derivative with respect to
/// `Re ω_j` (`Im ω_j`).
#[derive(Debug, Clone)]
pub struct VarproJacobian {
    pub wrt_re: DMatrix<C64>,
    pub wrt_im: DMatrix<C64>,
}

/// Outer-product form of the Jacobian: every column is
/// `Σ_s c_s u_s v_sᵀ` with two terms.
pub(crate) struct JacobianFactors {
    /// `g_j` then `φ_j`, each of length n.
    left: Vec<DVector<C64>>,
    /// `h_j` then `a_j`, each of length m.
    right: Vec<DVector<C64>>,
    r: usize,
}

/// One rank-one term of a Jacobian column: coefficient, left and right index.
type Term = (C64, usize, usize);

impl JacobianFactors {
    pub fn new(p: &Projection, times: &[f64]) -> Self {
        let r = p.dynamics.nrows();
        let m = p.dynamics.ncols();
        let mut left = Vec::with_capacity(2 * r);
        let mut right = Vec::with_capacity(2 * r);
        let mut a_rows = Vec::with_capacity(r);
        for j in 0..r {
            let d = DVector::from_fn(m, |k, _| p.dynamics[(j, k)] * times[k]);
            let g = &p.residual * d.conjugate();
            let h = p.pinv.column(j).conjugate();
            // a = d − (d T⁺) T, as a column vector
            let coeffs = p.pinv.transpose() * &d;
            let a = &d - p.dynamics.transpose() * coeffs;
            left.push(g);
            right.push(h);
            a_rows.push(a);
        }
        for (j, a) in a_rows.into_iter().enumerate() {
            left.push(p.scaled_modes.column(j).into_owned());
            right.push(a);
        }
        Self { left, right, r }
    }

    /// Parameter order: `Re ω_0..r`, then `Im ω_0..r`.
    fn terms(&self, param: usize) -> [Term; 2] {
        let r = self.r;
        let one = C64::new(1.0, 0.0);
        let i = C64::new(0.0, 1.0);
        if param < r {
            let j = param;
            [(-one, j, j), (-one, r + j, r + j)]
        } else {
            let j = param - r;
            [(i, j, j), (-i, r + j, r + j)]
        }
    }

    pub fn n_params(&self) -> usize {
        2 * self.r
    }

    /// Real Gram matrix `Re(JᴴJ)` and gradient `Re(Jᴴ r)`.
    pub fn normal_equations(&self, residual: &DMatrix<C64>) -> (DMatrix<f64>, DVector<f64>) {
        let q = self.left.len();
        let lu = DMatrix::from_fn(q, q, |a, b| self.left[a].dotc(&self.left[b]));
        let rv = DMatrix::from_fn(q, q, |a, b| self.right[a].dotc(&self.right[b]));
        // uᴴ R conj(v)
        let rproj: Vec<DVector<C64>> = self.right.iter().map(|v| residual * v.conjugate()).collect();
        let lr = DMatrix::from_fn(q, q, |a, b| self.left[a].dotc(&rproj[b]));

        let np = self.n_params();
        let mut gram = DMatrix::zeros(np, np);
        let mut grad = DVector::zeros(np);
        for a in 0..np {
            let ta = self.terms(a);
            for b in a..np {
                let tb = self.terms(b);
                let mut acc = C64::new(0.0, 0.0);
                for &(ca, ua, va) in &ta {
                    for &(cb, ub, vb) in &tb {
                        acc += ca.conj() * cb * lu[(ua, ub)] * rv[(va, vb)];
                    }
                }
                gram[(a, b)] = acc.re;
                gram[(b, a)] = acc.re;
            }
            let mut g = C64::new(0.0, 0.0);
            for &(ca, ua, va) in &ta {
                g += ca.conj() * lr[(ua, va)];
            }
            grad[a] = g.re;
        }
        (gram, grad)
    }

    /// Dense `(n·m)×2r` Jacobian.
    pub fn materialize(&self) -> VarproJacobian {
        let n = self.left[0].len();
        let m = self.right[0].len();
        let np = self.n_params();
        let mut dense = DMatrix::zeros(n * m, np);
        for p in 0..np {
            for (c, u, v) in self.terms(p) {
                let (u, v) = (&self.left[u], &self.right[v]);
                for k in 0..m {
                    for i in 0..n {
                        dense[(i + n * k, p)] += c * u[i] * v[k];
                    }
                }
            }
        }
        VarproJacobian {
            wrt_re: dense.columns(0, self.r).into_owned(),
            wrt_im: dense.columns(self.r, self.r).into_owned(),
        }
    }
}

/// Golub–Pereyra Jacobian of the projected residual with respect to the
/// real and imaginary parts of each eigenvalue.
pub fn varpro_jacobian(
    x: &DMatrix<C64>,
    omegas: &[C64],
    times: &[f64],
    pinv_threshold: f64,
) -> Result<VarproJacobian> {
    let p = Projection::new(x, omegas, times, pinv_threshold)?;
    Ok(JacobianFactors::new(&p, times).materialize())
}
