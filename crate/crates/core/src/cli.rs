//! Command-line front end.
//!
//! Exit codes: 0 success, 1 usage error, 2 data error, 3 convergence
//! failure.

use std::ffi::OsString;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::assignment::hungarian;
use crate::bop::{bop_dmd, BagConfig, EnsembleStatistics};
use crate::datagen::{oscillator_surrogate, toy_dataset, OscillatorSpec, SyntheticData, ToySpec};
use crate::error::{DmdError, Result};
use crate::exact::exact_dmd;
use crate::forecast::{deterministic_forecast, forecast};
use crate::io::{load_csv, save_csv, save_snapshots, save_table, ModelArchive, ModelKind, Table, TrainingMetadata};
use crate::snapshot::SnapshotMatrix;
use crate::varpro::{optimized_dmd, SolverConfig};
use crate::C64;

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_DATA: i32 = 2;
pub const EXIT_CONVERGENCE: i32 = 3;

#[derive(Debug, Parser)]
#[command(name = "bopdmd", version, about = "Exact, optimized and bagged DMD with uncertainty estimates")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Write a synthetic dataset.
    #[command(subcommand)]
    Generate(Generate),
    /// Fit a model to a snapshot CSV.
    Fit(FitArgs),
    /// Evaluate a model at new times.
    Forecast(ForecastArgs),
    /// Compare fitted eigenvalues with known ones.
    Report(ReportArgs),
}

#[derive(Debug, Subcommand)]
enum Generate {
    /// sin(x)e^{-2t} + cos(x)e^{it} + tanh(x)e^{t} plus noise.
    Toy(ToyArgs),
    /// Gaussian-bump standing waves.
    Oscillator(OscillatorArgs),
}

#[derive(Debug, Args)]
struct OutputArgs {
    #[arg(long)]
    out: PathBuf,
    /// Noise-free field.
    #[arg(long)]
    truth: Option<PathBuf>,
    /// True eigenvalues; defaults to omegas.json next to --out.
    #[arg(long)]
    omegas: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ToyArgs {
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 128)]
    n: usize,
    #[arg(long, default_value_t = 100)]
    m: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Keep only the real part of the field.
    #[arg(long)]
    real: bool,
    /// Fraction of entries replaced by ±10σ spikes.
    #[arg(long, default_value_t = 0.0)]
    outliers: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Args)]
struct OscillatorArgs {
    #[arg(long, value_delimiter = ',', default_value = "1.0,2.3")]
    freqs: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "0,0")]
    decays: Vec<f64>,
    #[arg(long, default_value_t = 32)]
    nx: usize,
    #[arg(long, default_value_t = 16)]
    ny: usize,
    #[arg(long, default_value_t = 200)]
    m: usize,
    #[arg(long, default_value_t = 0.0)]
    sigma: f64,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0.0)]
    t_start: f64,
    #[arg(long, default_value_t = 20.0)]
    t_end: f64,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Exact,
    Opt,
    Bop,
}

#[derive(Debug, Args)]
struct FitArgs {
    #[arg(long, value_enum)]
    method: Method,
    #[arg(long)]
    rank: usize,
    #[arg(long = "in")]
    input: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Snapshots per bag.
    #[arg(long)]
    p: Option<usize>,
    /// Number of bagging trials.
    #[arg(long, default_value_t = 100)]
    k: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Seed every trial from the full-data fit.
    #[arg(long)]
    freeze_seed: bool,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long, default_value_t = 10)]
    max_redraws: usize,
    #[arg(long)]
    with_replacement: bool,
    /// Reject trials with Re(ω) above this; defaults to 2/(t_m − t_1).
    #[arg(long)]
    reject_cap: Option<f64>,
    #[arg(long)]
    max_iters: Option<usize>,
    #[arg(long)]
    grad_tol: Option<f64>,
    /// Solver divergence threshold on Re(ω); defaults to 8/(t_m − t_1).
    #[arg(long)]
    real_cap: Option<f64>,
    #[arg(long)]
    conjugate_pairs: bool,
    /// Ensemble eigenvalue table; defaults to eigen_stats.csv next to --out.
    #[arg(long)]
    eigen_stats: Option<PathBuf>,
    /// Ensemble spatial variance; defaults to mode_variance.csv next to --out.
    #[arg(long)]
    mode_variance: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ForecastArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    t_start: f64,
    #[arg(long)]
    t_end: f64,
    #[arg(long)]
    steps: usize,
    #[arg(long, default_value_t = 100)]
    draws: usize,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long, default_value_t = 1)]
    threads: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    var_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct ReportArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    truth_omegas: PathBuf,
    /// Write the report here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

/// Eigenvalue list as stored in `omegas.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OmegaFile {
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl OmegaFile {
    pub fn from_values(values: &[C64]) -> Self {
        Self {
            re: values.iter().map(|z| z.re).collect(),
            im: values.iter().map(|z| z.im).collect(),
        }
    }

    pub fn values(&self) -> Result<Vec<C64>> {
        if self.re.len() != self.im.len() {
            return Err(DmdError::ShapeMismatch("re and im lists differ in length".into()));
        }
        Ok(self.re.iter().zip(&self.im).map(|(&a, &b)| C64::new(a, b)).collect())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EigenvalueMatch {
    pub truth: [f64; 2],
    pub estimate: [f64; 2],
    pub error: f64,
    /// `(truth − mean) / std` per component; absent without a spread.
    pub z_re: Option<f64>,
    pub z_im: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub kind: ModelKind,
    pub rank: usize,
    pub matches: Vec<EigenvalueMatch>,
    pub max_error: f64,
}

struct Failure {
    code: i32,
    message: String,
}

impl From<DmdError> for Failure {
    fn from(e: DmdError) -> Self {
        let code = match e {
            DmdError::TooFewAcceptedTrials { .. } => EXIT_CONVERGENCE,
            DmdError::InvalidConfig(_) | DmdError::InvalidRank(_) | DmdError::InvalidBagSize { .. } => EXIT_USAGE,
            _ => EXIT_DATA,
        };
        Failure {
            code,
            message: e.to_string(),
        }
    }
}

fn usage(message: impl Into<String>) -> Failure {
    Failure {
        code: EXIT_USAGE,
        message: message.into(),
    }
}

/// Parses `args` (including the program name) and runs the command.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
        }
    };
    let result = match cli.command {
        Command::Generate(Generate::Toy(a)) => generate_toy(&a),
        Command::Generate(Generate::Oscillator(a)) => generate_oscillator(&a),
        Command::Fit(a) => fit(&a),
        Command::Forecast(a) => run_forecast(&a),
        Command::Report(a) => report(&a),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("error: {}", f.message);
            f.code
        }
    }
}

fn sibling(path: &Path, name: &str) -> PathBuf {
    path.parent().unwrap_or(Path::new("")).join(name)
}

fn write_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).map_err(|source| DmdError::Io {
        path: path.to_path_buf(),
        source,
    })
}

fn write_generated(set: &SyntheticData, output: &OutputArgs) -> Result<()> {
    save_snapshots(&set.data, &output.out)?;
    if let Some(truth) = &output.truth {
        save_snapshots(&set.truth, truth)?;
    }
    let omegas = output.omegas.clone().unwrap_or_else(|| sibling(&output.out, "omegas.json"));
    write_json(&OmegaFile::from_values(set.true_omegas.as_slice()), &omegas)
}

fn generate_toy(a: &ToyArgs) -> Result<i32, Failure> {
    let spec = ToySpec {
        n: a.n,
        m: a.m,
        sigma: a.sigma,
        seed: a.seed,
        real: a.real,
        outlier_fraction: a.outliers,
        ..ToySpec::default()
    };
    write_generated(&toy_dataset(&spec)?, &a.output)?;
    Ok(EXIT_OK)
}

fn generate_oscillator(a: &OscillatorArgs) -> Result<i32, Failure> {
    let spec = OscillatorSpec {
        nx: a.nx,
        ny: a.ny,
        m: a.m,
        frequencies: a.freqs.clone(),
        decays: a.decays.clone(),
        sigma: a.sigma,
        seed: a.seed,
        t_range: (a.t_start, a.t_end),
    };
    write_generated(&oscillator_surrogate(&spec)?, &a.output)?;
    Ok(EXIT_OK)
}

fn solver_config(a: &FitArgs) -> SolverConfig {
    let mut cfg = SolverConfig::default();
    if let Some(v) = a.max_iters {
        cfg.max_iterations = v;
    }
    if let Some(v) = a.grad_tol {
        cfg.gradient_tolerance = v;
    }
    cfg.eigenvalue_real_cap = a.real_cap;
    cfg.enforce_conjugate_pairs = a.conjugate_pairs;
    cfg
}

fn metadata(data: &SnapshotMatrix, rank: usize) -> TrainingMetadata {
    let t = data.times();
    TrainingMetadata {
        rank,
        n: data.n(),
        m: data.m(),
        t_start: t[0],
        t_end: t[t.len() - 1],
        ..TrainingMetadata::default()
    }
}

fn fit(a: &FitArgs) -> Result<i32, Failure> {
    let data = load_csv(&a.input)?;
    let mut meta = metadata(&data, a.rank);
    match a.method {
        Method::Exact => {
            let (model, _) = exact_dmd(&data, a.rank)?;
            ModelArchive::from_model(ModelKind::Exact, &model, meta).save(&a.out)?;
            Ok(EXIT_OK)
        }
        Method::Opt => {
            let solver = solver_config(a);
            solver.validate()?;
            let (model, report) = optimized_dmd(&data, a.rank, None, &solver)?;
            let converged = report.converged;
            meta.solver = Some(solver);
            meta.report = Some(report.clone());
            ModelArchive::from_model(ModelKind::Optimized, &model, meta).save(&a.out)?;
            if converged {
                Ok(EXIT_OK)
            } else {
                eprintln!(
                    "warning: solver stopped with {:?} after {} iterations",
                    report.termination_reason, report.iterations
                );
                Ok(EXIT_CONVERGENCE)
            }
        }
        Method::Bop => {
            let seed = a.seed.ok_or_else(|| usage("--seed is required for --method bop"))?;
            let p = a.p.ok_or_else(|| usage("--p is required for --method bop"))?;
            let bag = BagConfig {
                bag_size: p,
                trials: a.k,
                max_redraws: a.max_redraws,
                rejection_real_cap: a.reject_cap,
                base_seed: seed,
                freeze_seed: a.freeze_seed || a.threads > 1,
                with_replacement: a.with_replacement,
                threads: a.threads,
            };
            let solver = solver_config(a);
            let result = bop_dmd(&data, a.rank, &bag, &solver)?;
            meta.solver = Some(solver);
            meta.bag = Some(bag);
            meta.seed = Some(seed);
            meta.report = Some(result.base_report);
            let stats = &result.statistics;
            ModelArchive::from_ensemble(stats, meta).save(&a.out)?;
            let eigen_path = a.eigen_stats.clone().unwrap_or_else(|| sibling(&a.out, "eigen_stats.csv"));
            save_table(&eigen_table(stats), eigen_path)?;
            let var_path = a.mode_variance.clone().unwrap_or_else(|| sibling(&a.out, "mode_variance.csv"));
            save_table(&mode_variance_table(stats), var_path)?;
            Ok(EXIT_OK)
        }
    }
}

/// One row per eigenvalue: mean and variance of ω and b, by component.
pub fn eigen_table(stats: &EnsembleStatistics) -> Table {
    let header = [
        "eigenvalue",
        "mean_re",
        "mean_im",
        "var_re",
        "var_im",
        "amplitude_mean_re",
        "amplitude_mean_im",
        "amplitude_var_re",
        "amplitude_var_im",
    ];
    let rows = (0..stats.rank())
        .map(|j| {
            let w = stats.eigenvalue_mean[j];
            let b = stats.amplitude_mean[j];
            (
                format!("w{j}"),
                vec![
                    w.re,
                    w.im,
                    stats.eigenvalue_variance.re[j],
                    stats.eigenvalue_variance.im[j],
                    b.re,
                    b.im,
                    stats.amplitude_variance.re[j],
                    stats.amplitude_variance.im[j],
                ],
            )
        })
        .collect();
    Table {
        header: header.iter().map(|s| s.to_string()).collect(),
        rows,
    }
}

/// One row per spatial point: mode variance, real then imaginary, per mode.
pub fn mode_variance_table(stats: &EnsembleStatistics) -> Table {
    let r = stats.rank();
    let mut header = vec!["x".to_string()];
    for j in 0..r {
        header.push(format!("mode{j}_re"));
        header.push(format!("mode{j}_im"));
    }
    let rows = (0..stats.n())
        .map(|i| {
            let values = (0..r)
                .flat_map(|j| [stats.mode_variance.re[(i, j)], stats.mode_variance.im[(i, j)]])
                .collect();
            (format!("x{i}"), values)
        })
        .collect();
    Table { header, rows }
}

/// `steps` evenly spaced times from `start` to `end` inclusive.
pub fn forecast_times(start: f64, end: f64, steps: usize) -> Vec<f64> {
    match steps {
        0 => Vec::new(),
        1 => vec![start],
        _ => {
            let h = (end - start) / (steps - 1) as f64;
            (0..steps)
                .map(|k| if k == steps - 1 { end } else { start + h * k as f64 })
                .collect()
        }
    }
}

fn run_forecast(a: &ForecastArgs) -> Result<i32, Failure> {
    let seed = a.seed.ok_or_else(|| usage("--seed is required for forecast"))?;
    if a.steps < 1 || a.t_end.is_nan() || a.t_end <= a.t_start {
        return Err(usage("need --steps ≥ 1 and --t-end > --t-start"));
    }
    let archive = ModelArchive::load(&a.model)?;
    let times = forecast_times(a.t_start, a.t_end, a.steps);
    let fc = match archive.ensemble()? {
        Some(stats) => forecast(&stats, &times, a.draws, seed, a.threads)?,
        None => deterministic_forecast(&archive.model()?, &times)?,
    };
    save_csv(&fc.mean, &fc.times, &a.out)?;
    if let Some(path) = &a.var_out {
        save_csv(&fc.variance.map(|v| C64::new(v, 0.0)), &fc.times, path)?;
    }
    Ok(EXIT_OK)
}

/// Matches estimates to true eigenvalues with minimum total distance.
///
/// Unequal counts are padded with zero-cost dummies; unmatched truths are
/// left out of the report.
pub fn build_report(archive: &ModelArchive, truth: &[C64]) -> Result<Report> {
    let stats = archive.ensemble()?;
    let model = archive.model()?;
    let est = model.eigenvalues.as_slice();
    let size = est.len().max(truth.len());
    let cost: Vec<Vec<f64>> = (0..size)
        .map(|i| {
            (0..size)
                .map(|j| match (truth.get(i), est.get(j)) {
                    (Some(t), Some(e)) => (t - e).norm(),
                    _ => 0.0,
                })
                .collect()
        })
        .collect();
    let assign = hungarian(&cost);
    let zscore = |diff: f64, var: f64| (var > 0.0).then(|| diff / var.sqrt());
    let mut matches = Vec::new();
    for (i, t) in truth.iter().enumerate() {
        let j = assign[i];
        let Some(e) = est.get(j) else { continue };
        let (z_re, z_im) = match &stats {
            Some(s) => (
                zscore(t.re - e.re, s.eigenvalue_variance.re[j]),
                zscore(t.im - e.im, s.eigenvalue_variance.im[j]),
            ),
            None => (None, None),
        };
        matches.push(EigenvalueMatch {
            truth: [t.re, t.im],
            estimate: [e.re, e.im],
            error: (t - e).norm(),
            z_re,
            z_im,
        });
    }
    let max_error = matches.iter().map(|m| m.error).fold(0.0, f64::max);
    Ok(Report {
        kind: archive.kind,
        rank: model.rank(),
        matches,
        max_error,
    })
}

fn report(a: &ReportArgs) -> Result<i32, Failure> {
    let archive = ModelArchive::load(&a.model)?;
    let text = fs::read_to_string(&a.truth_omegas).map_err(|source| DmdError::Io {
        path: a.truth_omegas.clone(),
        source,
    })?;
    let truth: OmegaFile = serde_json::from_str(&text).map_err(DmdError::from)?;
    let report = build_report(&archive, &truth.values()?)?;
    match &a.out {
        Some(path) => write_json(&report, path)?,
        None => {
            let text = serde_json::to_string_pretty(&report).map_err(DmdError::from)?;
            // a closed pipe (e.g. `| head`) is not an error
            let _ = writeln!(std::io::stdout(), "{text}");
        }
    }
    Ok(EXIT_OK)
}
