//! Optimized DMD by variable projection.
//!
//! The linear coefficients `Φ_b` are eliminated in closed form, and a
//! Levenberg–Marquardt iteration runs on the eigenvalues alone, treating
//! each complex `ω_j` as two real unknowns.

mod projection;
mod solver;

pub use projection::{solve_linear_stage, varpro_cost, varpro_jacobian, VarproJacobian};
pub use solver::{initialize_eigenvalues, optimized_dmd, pair_conjugates};

pub use crate::model::time_dynamics_matrix;

use serde::{Deserialize, Serialize};

use crate::error::{DmdError, Result};

/// Levenberg–Marquardt settings for [`optimized_dmd`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub max_iterations: usize,
    /// Stop when every gradient component is below this cosine with the
    /// residual (scale-free, as in MINPACK).
    pub gradient_tolerance: f64,
    /// Stop when `‖δ‖ ≤ tol · (‖θ‖ + tol)`.
    pub step_tolerance: f64,
    /// Stop when `‖R‖_F / ‖X‖_F` drops below this.
    pub residual_tolerance: f64,
    pub marquardt_lambda_init: f64,
    /// Damping multiplier on rejection, divisor on acceptance.
    pub marquardt_scale: f64,
    /// Relative singular-value cutoff for `T(ω)⁺`.
    pub pinv_threshold: f64,
    /// Largest admissible `Re(ω)`; `None` means `8 / (t_m − t_1)`.
    pub eigenvalue_real_cap: Option<f64>,
    /// Pair eigenvalues into conjugates after convergence (real data only).
    pub enforce_conjugate_pairs: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            max_iterations: 200,
            gradient_tolerance: 1e-8,
            step_tolerance: 1e-10,
            residual_tolerance: 1e-12,
            marquardt_lambda_init: 1e-2,
            marquardt_scale: 2.0,
            pinv_threshold: 1e-12,
            eigenvalue_real_cap: None,
            enforce_conjugate_pairs: false,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("gradient_tolerance", self.gradient_tolerance),
            ("step_tolerance", self.step_tolerance),
            ("residual_tolerance", self.residual_tolerance),
            ("marquardt_lambda_init", self.marquardt_lambda_init),
            ("pinv_threshold", self.pinv_threshold),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(DmdError::InvalidConfig(format!("{name} must be positive, got {v}")));
            }
        }
        if self.max_iterations < 1 {
            return Err(DmdError::InvalidConfig("max_iterations must be at least 1".into()));
        }
        if !(self.marquardt_scale > 1.0 && self.marquardt_scale.is_finite()) {
            return Err(DmdError::InvalidConfig("marquardt_scale must exceed 1".into()));
        }
        if let Some(cap) = self.eigenvalue_real_cap {
            if cap.is_nan() {
                return Err(DmdError::InvalidConfig("eigenvalue_real_cap is NaN".into()));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum TerminationReason {
    GradientTol,
    StepTol,
    ResidualTol,
    MaxIters,
    Diverged,
}

/// Outcome of one optimized-DMD solve.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceReport {
    pub converged: bool,
    pub iterations: usize,
    /// Squared Frobenius norm of the final residual.
    pub final_cost: f64,
    pub gradient_norm: f64,
    pub termination_reason: TerminationReason,
    /// Cost of the starting point followed by every accepted iterate.
    pub cost_history: Vec<f64>,
}
