use std::path::PathBuf;

use thiserror::Error;

/// Errors raised by the simulator and its helpers.
#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("rejection sampling exhausted {attempts} attempts (target margin too close to radius?)")]
    RejectionBudget { attempts: u64 },

    #[error("dataset is not separated by its witness (margin {margin})")]
    NotSeparated { margin: f64 },

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid staleness profile: {0}")]
    Profile(String),

    #[error("staleness {staleness} outside 0..={tau}")]
    StalenessOutOfRange { staleness: usize, tau: usize },

    #[error("weight mass {mass} deviates from 1")]
    MassDeviation { mass: f64 },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("schedule error at line {line}: {msg}")]
    Schedule { line: usize, msg: String },

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

impl SimError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad user input rather than the environment.
    pub fn is_config(&self) -> bool {
        matches!(
            self,
            SimError::Config(_)
                | SimError::Profile(_)
                | SimError::Schedule { .. }
                | SimError::Parse { .. }
                | SimError::RejectionBudget { .. }
                | SimError::NotSeparated { .. }
                | SimError::EmptyDataset
        )
    }
}

pub type Result<T, E = SimError> = std::result::Result<T, E>;
