use thiserror::Error;

/// Errors surfaced by the estimation pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("need at least {needed} published studies, found {found}")]
    TooFewStudies { needed: usize, found: usize },

    #[error("invalid dataset: {}", .0.iter().map(ToString::to_string).collect::<Vec<_>>().join("; "))]
    Validation(Vec<crate::dataset::Violation>),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("did not converge after {iterations} iterations (last iterate {last})")]
    NonConvergence { iterations: usize, last: f64 },

    #[error("fit did not converge: {0}")]
    NotConverged(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
