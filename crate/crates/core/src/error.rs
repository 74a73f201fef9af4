use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("domain error: {0}")]
    Domain(String),

    #[error("degenerate projection: {0}")]
    DegenerateProjection(String),

    #[error("point is not on the manifold (distance {distance:e})")]
    OffManifold { distance: f64 },

    #[error("vector is not tangent at the base point (normal component {normal_norm:e})")]
    InvalidTangent { normal_norm: f64 },

    #[error("ODE state became non-finite at step {step}{}", sample.map(|s| format!(" (sample {s})")).unwrap_or_default())]
    Divergence { step: usize, sample: Option<usize> },

    #[error("Sinkhorn did not converge after {iterations} iterations (marginal violation {violation:e})")]
    Convergence { iterations: usize, violation: f64 },

    #[error("unsupported: {0}")]
    Unsupported(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },

    #[error("i/o error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<serde_json::Error> for Error {
    fn from(e: serde_json::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;
