use thiserror::Error;

/// Errors raised across the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("series for V_n(t) did not converge (n={n}, t={t}, gamma={gamma}) after {terms} terms")]
    SeriesNonConvergence {
        n: usize,
        t: usize,
        gamma: f64,
        terms: usize,
    },

    #[error("stick-breaking produced K={k} components, exceeding truncation T={truncation}; increase truncation_t")]
    TruncationExceeded { k: usize, truncation: usize },

    #[error("covariance factorization failed for direction {direction} (rho={rho}, sigma2={sigma2})")]
    Factorization {
        direction: usize,
        rho: f64,
        sigma2: f64,
    },

    #[error("degenerate adjacency spectrum: min eigenvalue {min}, max eigenvalue {max}")]
    DegenerateSpectrum { min: f64, max: f64 },

    #[error("inconsistent model state: {0}")]
    InconsistentState(String),

    #[error("all conditional label weights vanished for unit {unit} in direction {direction}")]
    LabelUnderflow { unit: usize, direction: usize },

    #[error("iteration {iteration}: {source}")]
    AtIteration {
        iteration: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("io error at {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl AsRef<std::path::Path>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.as_ref().display().to_string(),
            source,
        }
    }
}
