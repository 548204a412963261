use thiserror::Error;

use crate::quantum::lemma::LemmaError;
use crate::scenario::config::ConfigErrors;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid increment density: {0}")]
    InvalidDensity(String),

    #[error("invalid time model: {0}")]
    InvalidModel(String),

    #[error("out of range: {0}")]
    Range(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: usize, found: usize },

    #[error("invalid density matrix: {0}")]
    InvalidState(String),

    #[error("invalid hamiltonian: {0}")]
    InvalidHamiltonian(String),

    #[error("time step {dt:e} exceeds the stability limit {limit:e}")]
    StepSize { dt: f64, limit: f64 },

    #[error("positivity lost at t = {t:e}: minimum eigenvalue {min_eigenvalue:e}")]
    PositivityLoss { t: f64, min_eigenvalue: f64 },

    #[error("unstable discretization: {0}")]
    Stability(String),

    #[error("boundary mass {mass:e} exceeds {limit:e} at t = {t:e}")]
    BoundaryMass { t: f64, mass: f64, limit: f64 },

    #[error(transparent)]
    Lemma(#[from] LemmaError),

    #[error(transparent)]
    Config(#[from] ConfigErrors),

    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn io(path: impl Into<String>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
