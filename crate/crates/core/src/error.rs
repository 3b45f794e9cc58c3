use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("negative reflectance {value} in band {band}")]
    NegativeReflectance { band: String, value: f64 },

    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("invalid band count {0}: at least 2 bands are required")]
    InvalidBandCount(usize),

    #[error("unsupported polynomial degree {0}: only degree 1 and 2 are implemented")]
    UnsupportedDegree(u8),

    #[error("dimension mismatch: expected {expected}, got {actual} ({context})")]
    Dimension {
        context: String,
        expected: usize,
        actual: usize,
    },

    #[error("invalid parameter: {0}")]
    Parameter(String),

    #[error("class {label:?} has {count} samples; at least {required} are required")]
    DegenerateClass {
        label: String,
        count: usize,
        required: usize,
    },

    #[error("training failed: {0}")]
    Training(String),

    #[error("solver did not converge after {iterations} iterations (final objective {objective})")]
    Convergence { iterations: usize, objective: f64 },

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("{path}: row {row}: {message}")]
    Row {
        path: PathBuf,
        row: usize,
        message: String,
    },

    #[error("model document: {0}")]
    Document(String),

    #[error("unsupported model document version {found} (supported: {supported})")]
    Version { found: u64, supported: u64 },

    #[error("model checksum mismatch: stored {stored}, computed {computed}")]
    Checksum { stored: String, computed: String },

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dimension(context: impl Into<String>, expected: usize, actual: usize) -> Self {
        Error::Dimension {
            context: context.into(),
            expected,
            actual,
        }
    }

    /// Wraps the error with a description of the stage that produced it.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }

    /// Walks through `Context` wrappers to the originating error.
    pub fn root(&self) -> &Error {
        match self {
            Error::Context { source, .. } => source.root(),
            other => other,
        }
    }

    /// True for errors caused by invalid input data or parameters, as opposed
    /// to failures of the numerical routines.
    pub fn is_validation(&self) -> bool {
        !matches!(
            self.root(),
            Error::Training(_) | Error::Convergence { .. }
        )
    }
}
