//! Synthetic snapshot generators with known eigenvalues.
//!
//! All noise is i.i.d. standard normal scaled by `sigma`, drawn from a
//! ChaCha stream seeded with the caller's seed, so a (spec, seed) pair
//! always produces bit-identical matrices.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::error::{DmdError, Result};
use crate::snapshot::SnapshotMatrix;
use crate::C64;

/// Noisy snapshots, their noise-free counterpart and the eigenvalues used
/// to build them.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub data: SnapshotMatrix,
    pub truth: SnapshotMatrix,
    pub true_omegas: DVector<C64>,
}

/// Three-mode test field
/// `sin(x) e^{−2t} + cos(x) e^{it} + tanh(x) e^{t}` plus noise.
#[derive(Debug, Clone, PartialEq)]
pub struct ToySpec {
    pub n: usize,
    pub m: usize,
    pub sigma: f64,
    pub x_range: (f64, f64),
    pub t_range: (f64, f64),
    pub seed: u64,
    /// Keep only the real part. The `e^{it}` term then splits into a
    /// conjugate pair and the field has four eigenvalues `{−2, ±i, 1}`.
    pub real: bool,
    /// Fraction of entries whose noise is replaced by a `±10σ` spike.
    /// Not part of the Gaussian noise model; zero by default.
    pub outlier_fraction: f64,
}

impl Default for ToySpec {
    fn default() -> Self {
        Self {
            n: 128,
            m: 100,
            sigma: 0.0,
            x_range: (0.0, 1.0),
            t_range: (0.0, 1.0),
            seed: 0,
            real: false,
            outlier_fraction: 0.0,
        }
    }
}

impl ToySpec {
    pub fn with_noise(sigma: f64, seed: u64) -> Self {
        Self {
            sigma,
            seed,
            ..Self::default()
        }
    }

    fn validate(&self) -> Result<()> {
        if self.n < 2 || self.m < 2 {
            return Err(DmdError::InvalidConfig("toy grid needs n, m >= 2".into()));
        }
        if !(self.sigma >= 0.0 && self.sigma.is_finite()) {
            return Err(DmdError::InvalidConfig(format!("sigma must be >= 0, got {}", self.sigma)));
        }
        if !(0.0..=1.0).contains(&self.outlier_fraction) {
            return Err(DmdError::InvalidConfig("outlier_fraction must lie in [0, 1]".into()));
        }
        if !(self.x_range.1 > self.x_range.0 && self.t_range.1 > self.t_range.0) {
            return Err(DmdError::InvalidConfig("empty coordinate range".into()));
        }
        Ok(())
    }
}

fn linspace(lo: f64, hi: f64, len: usize) -> Vec<f64> {
    if len == 1 {
        return vec![lo];
    }
    let step = (hi - lo) / (len - 1) as f64;
    (0..len).map(|k| lo + step * k as f64).collect()
}

/// Adds `sigma` noise to a noise-free field, entry by entry in column-major
/// order: real part first, then imaginary part unless `real_only`.
fn add_noise(truth: &DMatrix<C64>, sigma: f64, seed: u64, real_only: bool, outliers: f64) -> DMatrix<C64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut noisy = truth.clone();
    if sigma == 0.0 {
        return noisy;
    }
    for z in noisy.iter_mut() {
        let er: f64 = rng.sample(StandardNormal);
        let ei: f64 = if real_only { 0.0 } else { rng.sample(StandardNormal) };
        let mut delta = C64::new(sigma * er, sigma * ei);
        if outliers > 0.0 && rng.random::<f64>() < outliers {
            let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
            delta = C64::new(10.0 * sigma * sign, 0.0);
        }
        *z += delta;
    }
    noisy
}

/// Generates the three-mode toy field on an equispaced grid.
pub fn toy_dataset(spec: &ToySpec) -> Result<SyntheticData> {
    spec.validate()?;
    let xs = linspace(spec.x_range.0, spec.x_range.1, spec.n);
    let ts = linspace(spec.t_range.0, spec.t_range.1, spec.m);
    let omegas = [C64::new(-2.0, 0.0), C64::new(0.0, 1.0), C64::new(1.0, 0.0)];

    let field = DMatrix::from_fn(spec.n, spec.m, |i, k| {
        let (x, t) = (xs[i], ts[k]);
        let z = (omegas[0] * t).exp() * x.sin() + (omegas[1] * t).exp() * x.cos() + (omegas[2] * t).exp() * x.tanh();
        if spec.real {
            C64::new(z.re, 0.0)
        } else {
            z
        }
    });
    let noisy = add_noise(&field, spec.sigma, spec.seed, spec.real, spec.outlier_fraction);
    let times = DVector::from_vec(ts);

    let true_omegas = if spec.real {
        DVector::from_vec(vec![omegas[0], omegas[1], omegas[1].conj(), omegas[2]])
    } else {
        DVector::from_row_slice(&omegas)
    };
    Ok(SyntheticData {
        data: SnapshotMatrix::new(noisy, times.clone())?,
        truth: SnapshotMatrix::new(field, times)?,
        true_omegas,
    })
}

/// Travelling-wave surrogate: damped or steady oscillations carried by
/// Gaussian bumps on a 2D grid.
#[derive(Debug, Clone, PartialEq)]
pub struct OscillatorSpec {
    pub nx: usize,
    pub ny: usize,
    pub m: usize,
    /// Angular frequencies; a zero frequency contributes one real mode.
    pub frequencies: Vec<f64>,
    /// Growth rates `Re(ω)`, one per frequency.
    pub decays: Vec<f64>,
    pub sigma: f64,
    pub seed: u64,
    pub t_range: (f64, f64),
}

impl Default for OscillatorSpec {
    fn default() -> Self {
        Self {
            nx: 32,
            ny: 16,
            m: 200,
            frequencies: vec![1.0, 2.3],
            decays: vec![0.0, 0.0],
            sigma: 0.0,
            seed: 0,
            t_range: (0.0, 20.0),
        }
    }
}

/// Bump centre number `k`, from an additive recurrence that spreads points
/// evenly over the inner square.
fn bump_center(k: usize) -> (f64, f64) {
    let a = (0.5 + 0.754_877_666_246_692_7 * k as f64).fract();
    let b = (0.5 + 0.569_840_290_998_053_3 * k as f64).fract();
    (0.15 + 0.7 * a, 0.15 + 0.7 * b)
}

fn bump(k: usize, x: f64, y: f64) -> f64 {
    let (cx, cy) = bump_center(k);
    let width = 0.15;
    let amp = 1.0 / (1.0 + 0.25 * k as f64);
    amp * (-((x - cx).powi(2) + (y - cy).powi(2)) / (2.0 * width * width)).exp()
}

/// Real-valued `(nx·ny) × m` field
/// `Σ_j e^{d_j t} (g_{2j} cos(f_j t) + g_{2j+1} sin(f_j t))`.
///
/// Each non-zero frequency contributes the eigenvalue pair `d_j ± i f_j`;
/// a zero frequency contributes the single real eigenvalue `d_j`.
pub fn oscillator_surrogate(spec: &OscillatorSpec) -> Result<SyntheticData> {
    if spec.frequencies.len() != spec.decays.len() {
        return Err(DmdError::InvalidConfig(format!(
            "{} frequencies but {} decay rates",
            spec.frequencies.len(),
            spec.decays.len()
        )));
    }
    if spec.frequencies.iter().chain(&spec.decays).any(|v| !v.is_finite()) {
        return Err(DmdError::InvalidConfig("non-finite frequency or decay".into()));
    }
    if spec.nx < 1 || spec.ny < 1 || spec.m < 2 {
        return Err(DmdError::InvalidConfig("oscillator grid too small".into()));
    }
    if !(spec.sigma >= 0.0 && spec.sigma.is_finite()) {
        return Err(DmdError::InvalidConfig(format!("sigma must be >= 0, got {}", spec.sigma)));
    }
    let ts = linspace(spec.t_range.0, spec.t_range.1, spec.m);
    let n = spec.nx * spec.ny;
    let xs = linspace(0.0, 1.0, spec.nx);
    let ys = linspace(0.0, 1.0, spec.ny);
    let coords: Vec<(f64, f64)> = (0..n).map(|i| (xs[i % spec.nx], ys[i / spec.nx])).collect();

    let field = DMatrix::from_fn(n, spec.m, |i, k| {
        let (x, y) = coords[i];
        let t = ts[k];
        let v: f64 = spec
            .frequencies
            .iter()
            .zip(&spec.decays)
            .enumerate()
            .map(|(j, (&f, &d))| {
                let envelope = (d * t).exp();
                envelope * (bump(2 * j, x, y) * (f * t).cos() + bump(2 * j + 1, x, y) * (f * t).sin())
            })
            .sum();
        C64::new(v, 0.0)
    });
    let noisy = add_noise(&field, spec.sigma, spec.seed, true, 0.0);

    let mut omegas = Vec::new();
    for (&f, &d) in spec.frequencies.iter().zip(&spec.decays) {
        if f == 0.0 {
            omegas.push(C64::new(d, 0.0));
        } else {
            omegas.push(C64::new(d, f));
            omegas.push(C64::new(d, -f));
        }
    }
    let times = DVector::from_vec(ts);
    Ok(SyntheticData {
        data: SnapshotMatrix::new(noisy, times.clone())?,
        truth: SnapshotMatrix::new(field, times)?,
        true_omegas: DVector::from_vec(omegas),
    })
}
