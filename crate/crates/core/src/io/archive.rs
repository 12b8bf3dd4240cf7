//! Versioned JSON archive for fitted models and ensembles.
//!
//! Matrices are stored column-major as separate real and imaginary arrays.
//! Floats are written in shortest round-trip form, so loading an archive
//! reproduces every number bit for bit.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::Path;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::bop::{BagConfig, EnsembleStatistics, SplitVariance};
use crate::error::{DmdError, Result};
use crate::model::DmdModel;
use crate::varpro::{ConvergenceReport, SolverConfig};
use crate::C64;

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ModelKind {
    Exact,
    Optimized,
    BopEnsemble,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComplexMatrix {
    pub rows: usize,
    pub cols: usize,
    pub re: Vec<f64>,
    pub im: Vec<f64>,
}

impl ComplexMatrix {
    pub fn from_matrix(m: &DMatrix<C64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            re: m.iter().map(|z| z.re).collect(),
            im: m.iter().map(|z| z.im).collect(),
        }
    }

    pub fn from_vector(v: &DVector<C64>) -> Self {
        Self {
            rows: v.len(),
            cols: 1,
            re: v.iter().map(|z| z.re).collect(),
            im: v.iter().map(|z| z.im).collect(),
        }
    }

    fn check(&self) -> Result<()> {
        let len = self.rows * self.cols;
        if self.re.len() != len || self.im.len() != len {
            return Err(DmdError::ShapeMismatch(format!(
                "stored {}x{} matrix has {} real and {} imaginary entries",
                self.rows,
                self.cols,
                self.re.len(),
                self.im.len()
            )));
        }
        Ok(())
    }

    pub fn to_matrix(&self) -> Result<DMatrix<C64>> {
        self.check()?;
        Ok(DMatrix::from_iterator(
            self.rows,
            self.cols,
            self.re.iter().zip(&self.im).map(|(&a, &b)| C64::new(a, b)),
        ))
    }

    pub fn to_vector(&self) -> Result<DVector<C64>> {
        self.check()?;
        Ok(DVector::from_iterator(
            self.rows * self.cols,
            self.re.iter().zip(&self.im).map(|(&a, &b)| C64::new(a, b)),
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RealMatrix {
    pub rows: usize,
    pub cols: usize,
    pub data: Vec<f64>,
}

impl RealMatrix {
    pub fn from_matrix(m: &DMatrix<f64>) -> Self {
        Self {
            rows: m.nrows(),
            cols: m.ncols(),
            data: m.as_slice().to_vec(),
        }
    }

    pub fn to_matrix(&self) -> Result<DMatrix<f64>> {
        if self.data.len() != self.rows * self.cols {
            return Err(DmdError::ShapeMismatch("stored real matrix has the wrong length".into()));
        }
        Ok(DMatrix::from_column_slice(self.rows, self.cols, &self.data))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredModel {
    pub modes: ComplexMatrix,
    pub eigenvalues: ComplexMatrix,
    pub amplitudes: ComplexMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredEnsemble {
    pub mode_mean: ComplexMatrix,
    pub mode_variance_re: RealMatrix,
    pub mode_variance_im: RealMatrix,
    pub eigenvalue_mean: ComplexMatrix,
    pub eigenvalue_variance_re: Vec<f64>,
    pub eigenvalue_variance_im: Vec<f64>,
    pub amplitude_mean: ComplexMatrix,
    pub amplitude_variance_re: Vec<f64>,
    pub amplitude_variance_im: Vec<f64>,
    pub accepted_trials: usize,
    pub rejected_trials: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Payload {
    Model(StoredModel),
    Ensemble(StoredEnsemble),
}

/// What the model was trained on and how.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub rank: usize,
    pub n: usize,
    pub m: usize,
    pub t_start: f64,
    pub t_end: f64,
    pub solver: Option<SolverConfig>,
    pub bag: Option<BagConfig>,
    pub seed: Option<u64>,
    pub report: Option<ConvergenceReport>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelArchive {
    pub schema_version: u32,
    pub kind: ModelKind,
    pub payload: Payload,
    pub metadata: TrainingMetadata,
}

impl ModelArchive {
    pub fn from_model(kind: ModelKind, model: &DmdModel, metadata: TrainingMetadata) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind,
            payload: Payload::Model(StoredModel {
                modes: ComplexMatrix::from_matrix(&model.modes),
                eigenvalues: ComplexMatrix::from_vector(&model.eigenvalues),
                amplitudes: ComplexMatrix::from_vector(&model.amplitudes),
            }),
            metadata,
        }
    }

    pub fn from_ensemble(stats: &EnsembleStatistics, metadata: TrainingMetadata) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            kind: ModelKind::BopEnsemble,
            payload: Payload::Ensemble(StoredEnsemble {
                mode_mean: ComplexMatrix::from_matrix(&stats.mode_mean),
                mode_variance_re: RealMatrix::from_matrix(&stats.mode_variance.re),
                mode_variance_im: RealMatrix::from_matrix(&stats.mode_variance.im),
                eigenvalue_mean: ComplexMatrix::from_vector(&stats.eigenvalue_mean),
                eigenvalue_variance_re: stats.eigenvalue_variance.re.as_slice().to_vec(),
                eigenvalue_variance_im: stats.eigenvalue_variance.im.as_slice().to_vec(),
                amplitude_mean: ComplexMatrix::from_vector(&stats.amplitude_mean),
                amplitude_variance_re: stats.amplitude_variance.re.as_slice().to_vec(),
                amplitude_variance_im: stats.amplitude_variance.im.as_slice().to_vec(),
                accepted_trials: stats.accepted_trials,
                rejected_trials: stats.rejected_trials,
            }),
            metadata,
        }
    }

    /// The ensemble statistics, if this is an ensemble archive.
    pub fn ensemble(&self) -> Result<Option<EnsembleStatistics>> {
        let Payload::Ensemble(e) = &self.payload else {
            return Ok(None);
        };
        Ok(Some(EnsembleStatistics {
            mode_mean: e.mode_mean.to_matrix()?,
            mode_variance: SplitVariance {
                re: e.mode_variance_re.to_matrix()?,
                im: e.mode_variance_im.to_matrix()?,
            },
            eigenvalue_mean: e.eigenvalue_mean.to_vector()?,
            eigenvalue_variance: SplitVariance {
                re: DVector::from_vec(e.eigenvalue_variance_re.clone()),
                im: DVector::from_vec(e.eigenvalue_variance_im.clone()),
            },
            amplitude_mean: e.amplitude_mean.to_vector()?,
            amplitude_variance: SplitVariance {
                re: DVector::from_vec(e.amplitude_variance_re.clone()),
                im: DVector::from_vec(e.amplitude_variance_im.clone()),
            },
            accepted_trials: e.accepted_trials,
            rejected_trials: e.rejected_trials,
        }))
    }

    /// The stored model; for an ensemble, the model built from the means.
    pub fn model(&self) -> Result<DmdModel> {
        match &self.payload {
            Payload::Model(m) => Ok(DmdModel {
                modes: m.modes.to_matrix()?,
                eigenvalues: m.eigenvalues.to_vector()?,
                amplitudes: m.amplitudes.to_vector()?,
            }),
            Payload::Ensemble(_) => Ok(self.ensemble()?.expect("ensemble payload").mean_model()),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self> {
        let archive: Self = serde_json::from_str(s)?;
        archive.check_version()?;
        Ok(archive)
    }

    fn check_version(&self) -> Result<()> {
        if self.schema_version != SCHEMA_VERSION {
            return Err(DmdError::InvalidConfig(format!(
                "unsupported archive schema version {}",
                self.schema_version
            )));
        }
        Ok(())
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let io = |source| DmdError::Io {
            path: path.to_path_buf(),
            source,
        };
        let mut w = BufWriter::new(File::create(path).map_err(io)?);
        serde_json::to_writer_pretty(&mut w, self)?;
        w.write_all(b"\n").map_err(io)?;
        w.flush().map_err(io)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|source| DmdError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        let archive: Self = serde_json::from_reader(BufReader::new(file))?;
        archive.check_version()?;
        Ok(archive)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn awkward_model() -> DmdModel {
        let modes = DMatrix::from_fn(4, 2, |i, j| C64::new(0.1 * (i as f64 + 1.0) / 3.0, -(j as f64) / 7.0));
        DmdModel {
            modes,
            eigenvalues: DVector::from_vec(vec![C64::new(-1.0 / 3.0, 2.0f64.sqrt()), C64::new(1e-300, -0.0)]),
            amplitudes: DVector::from_vec(vec![C64::new(f64::MAX, f64::MIN_POSITIVE), C64::new(-0.0, 5e-324)]),
        }
    }

    fn bits(m: &DmdModel) -> Vec<u64> {
        m.modes
            .iter()
            .chain(m.eigenvalues.iter())
            .chain(m.amplitudes.iter())
            .flat_map(|z| [z.re.to_bits(), z.im.to_bits()])
            .collect()
    }

    #[test]
    fn model_round_trip_is_bit_exact() {
        let model = awkward_model();
        let meta = TrainingMetadata {
            rank: 2,
            n: 4,
            m: 10,
            t_start: 0.1,
            t_end: 1.0 / 3.0,
            solver: Some(SolverConfig::default()),
            ..TrainingMetadata::default()
        };
        let archive = ModelArchive::from_model(ModelKind::Optimized, &model, meta);
        let back = ModelArchive::from_json(&archive.to_json().unwrap()).unwrap();
        assert_eq!(back, archive);
        assert_eq!(bits(&back.model().unwrap()), bits(&model));
    }

    #[test]
    fn ensemble_round_trip_is_bit_exact() {
        let model = awkward_model();
        let stats = EnsembleStatistics {
            mode_mean: model.modes.clone(),
            mode_variance: SplitVariance {
                re: DMatrix::from_fn(4, 2, |i, j| (i * j) as f64 / 9.0),
                im: DMatrix::from_element(4, 2, 1e-17),
            },
            eigenvalue_mean: model.eigenvalues.clone(),
            eigenvalue_variance: SplitVariance {
                re: DVector::from_vec(vec![0.1, 0.2]),
                im: DVector::from_vec(vec![1.0 / 3.0, 0.0]),
            },
            amplitude_mean: model.amplitudes.clone(),
            amplitude_variance: SplitVariance {
                re: DVector::from_vec(vec![7e-5, 0.3]),
                im: DVector::from_vec(vec![0.0, 2.5]),
            },
            accepted_trials: 98,
            rejected_trials: 4,
        };
        let archive = ModelArchive::from_ensemble(&stats, TrainingMetadata::default());
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        archive.save(&path).unwrap();
        let back = ModelArchive::load(&path).unwrap();
        assert_eq!(back.ensemble().unwrap().unwrap(), stats);
    }

    #[test]
    fn wrong_version_is_rejected() {
        let mut archive = ModelArchive::from_model(ModelKind::Exact, &awkward_model(), TrainingMetadata::default());
        archive.schema_version = 2;
        assert!(ModelArchive::from_json(&archive.to_json().unwrap()).is_err());
    }
}
