use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("slope must be positive and finite, got {0}")]
    NonPositiveSlope(f64),

    #[error("{kind} item needs {expected} intercept(s), got {got}")]
    InterceptCount {
        kind: &'static str,
        expected: String,
        got: usize,
    },

    #[error("GRM intercepts must be strictly decreasing: d[{index}] = {next} is not below d[{prev_index}] = {prev}")]
    GrmOrdering {
        prev_index: usize,
        index: usize,
        prev: f64,
        next: f64,
    },

    #[error("Rasch items have no free slope (got {0})")]
    RaschSlope(f64),

    #[error("category {category} out of range for item with {categories} categories")]
    CategoryOutOfRange { category: usize, categories: usize },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: String,
        expected: usize,
        got: usize,
    },

    #[error("{name} must be positive and finite, got {value}")]
    NonPositiveScale { name: &'static str, value: f64 },

    #[error("non-finite {0}")]
    NonFinite(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("invalid dataset: {0}")]
    Dataset(String),

    #[error("{file}:{line}: field `{field}`: {message}")]
    Parse {
        file: PathBuf,
        line: u64,
        field: String,
        message: String,
    },

    #[error("oracle refused instance: {0}")]
    OracleRefused(String),

    #[error("sampler initialization failed after {attempts} attempts")]
    Initialization { attempts: usize },

    #[error("{0}")]
    Sampler(String),

    #[error("every replication failed in cell {0}")]
    CellFailed(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },

    #[error("{path}: {source}")]
    Csv {
        path: PathBuf,
        #[source]
        source: csv::Error,
    },
}

impl Error {
    /// Validation failures are caused by bad input (exit code 1); everything
    /// else is a runtime failure (exit code 2).
    pub fn is_validation(&self) -> bool {
        !matches!(
            self,
            Error::Initialization { .. }
                | Error::Sampler(_)
                | Error::CellFailed(_)
                | Error::Io { .. }
        )
    }

    pub(crate) fn dim(what: impl Into<String>, expected: usize, got: usize) -> Self {
        Error::Dimension {
            what: what.into(),
            expected,
            got,
        }
    }
}
