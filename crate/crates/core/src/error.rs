use std::path::PathBuf;

/// Errors produced by the decomposition, ensemble and I/O layers.
#[derive(Debug, thiserror::Error)]
pub enum DmdError {
    #[error("invalid snapshot matrix: {0}")]
    InvalidSnapshots(String),

    #[error("non-uniform sampling: step {index} is {step}, expected {expected}")]
    NonUniformSampling {
        index: usize,
        step: f64,
        expected: f64,
    },

    #[error("rank {rank} exceeds the admissible maximum {max}")]
    RankTooLarge { rank: usize, max: usize },

    #[error("invalid rank {0}")]
    InvalidRank(usize),

    #[error("data matrix is rank deficient: singular value {index} is zero")]
    RankDeficient { index: usize },

    #[error("eigendecomposition failed: {0}")]
    DegenerateEigenproblem(String),

    #[error("exp(omega * t) overflows: Re(omega) * t = {exponent}")]
    EigenvalueOverflow { exponent: f64 },

    #[error("invalid bag size p={p} for m={m} snapshots")]
    InvalidBagSize { p: usize, m: usize },

    #[error("only {accepted} trials accepted ({rejected} rejected); need at least 2")]
    TooFewAcceptedTrials { accepted: usize, rejected: usize },

    #[error("ensemble statistics need at least 2 models, got {0}")]
    InsufficientModels(usize),

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("reference matrix has zero norm")]
    ZeroReference,

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("ragged rows: line {line} has {found} values, expected {expected}")]
    RaggedRows {
        line: usize,
        found: usize,
        expected: usize,
    },

    #[error("sample times are not strictly increasing at column {column}")]
    NonIncreasingTimes { column: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = DmdError> = std::result::Result<T, E>;
