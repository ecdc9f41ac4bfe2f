use thiserror::Error;

/// Errors raised across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("configuration error: {0}")]
    Config(String),

    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },

    #[error("eigensolver failure: {message} (worst residual {residual:e})")]
    Numerical { message: String, residual: f64 },

    #[error("eigenvalue {index} has multiplicity {multiplicity}; use the cluster derivative")]
    Degenerate { index: usize, multiplicity: usize },

    #[error("cluster at index {index} reaches the truncation boundary K={k}; raise K")]
    IncompleteCluster { index: usize, k: usize },

    #[error("eigenvalues {i} and {j} coincide (gap {gap:e}); gap derivative undefined")]
    DegenerateGap { i: usize, j: usize, gap: f64 },

    #[error("index {index} out of range 1..={max}")]
    Index { index: usize, max: usize },

    #[error("precondition violated: {0}")]
    Precondition(String),

    #[error("separation verification failed: quadratic form is indefinite (min {min:e}, max {max:e})")]
    SeparationFailed { min: f64, max: f64 },

    #[error("config parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

pub(crate) fn check_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::Dimension { expected, got });
    }
    Ok(())
}
