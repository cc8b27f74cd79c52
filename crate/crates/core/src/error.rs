use std::path::PathBuf;

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("geometry line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("unsupported element `{0}` (supported: H through Kr)")]
    UnsupportedElement(String),

    #[error("invalid molecule: {0}")]
    InvalidMolecule(String),

    #[error("unsupported basis: {0}")]
    UnsupportedBasis(String),

    #[error("overlap matrix is numerically singular")]
    LinearDependence,

    #[error("domain error: {0}")]
    Domain(String),

    #[error("SCF did not converge: {0}")]
    NotConverged(String),

    #[error("configuration error at `{path}`: {msg}")]
    Config { path: String, msg: String },

    #[error("electron configuration rejected: {0}")]
    RejectedConfiguration(String),

    #[error("wavefunction vanishes at the evaluation point")]
    NodalPoint,

    #[error("non-finite {what} at step {step}")]
    NonFinite { what: String, step: usize },

    #[error("checkpoint {path}: {msg}")]
    Checkpoint { path: PathBuf, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn config(path: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Config { path: path.into(), msg: msg.into() }
    }
}
