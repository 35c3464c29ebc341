use std::path::PathBuf;

use thiserror::Error;

/// Errors produced anywhere in the workbench.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("geometry error: {0}")]
    Geometry(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("numeric domain error: {0}")]
    NumericDomain(String),
    #[error("linear solver did not converge after {iterations} iterations (relative residual {residual:.3e})")]
    SolverDivergence { iterations: usize, residual: f64 },
    #[error("Picard iteration did not converge after {iterations} iterations (relative change {change:.3e}) at step {step}")]
    PicardDivergence {
        step: usize,
        iterations: usize,
        change: f64,
    },
    #[error("shape mismatch: {0}")]
    Shape(String),
    #[error("usage error: {0}")]
    Usage(String),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("rollout produced a non-finite state at step {step}")]
    Rollout { step: usize },
    #[error("integrity check failed for {what}: expected {expected}, found {found}")]
    Integrity {
        what: String,
        expected: String,
        found: String,
    },
    #[error("missing artifact {}", .0.display())]
    MissingArtifact(PathBuf),
    #[error("design {design}: {source}")]
    Design {
        design: String,
        #[source]
        source: Box<Error>,
    },
    #[error("format error: {0}")]
    Format(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
