// SPDX-License-Identifier: Apache-2.0

use std::path::PathBuf;

/// Errors raised anywhere in the estimation flow.
///
/// Variants are grouped so front ends can map them onto exit codes:
/// validation/format/configuration problems are the caller's fault,
/// numeric failures are not.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{path}: line {line}: {msg}")]
    Parse {
        path: PathBuf,
        line: u64,
        msg: String,
    },

    #[error("validation failed for {what}: {msg}")]
    Validation { what: String, msg: String },

    #[error("format error: {0}")]
    Format(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("solver did not converge after {iterations} iterations (relative residual {residual:e})")]
    Solver { iterations: usize, residual: f64 },

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error("generation error: {0}")]
    Generation(String),

    #[error("refusing to evaluate on training design `{0}`")]
    SeenDesign(String),

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn validation(what: impl Into<String>, msg: impl Into<String>) -> Self {
        Error::Validation {
            what: what.into(),
            msg: msg.into(),
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// True for failures that stem from bad input rather than numerics.
    pub fn is_validation(&self) -> bool {
        match self {
            Error::Parse { .. }
            | Error::Validation { .. }
            | Error::Format(_)
            | Error::Shape(_)
            | Error::Index(_)
            | Error::Config(_)
            | Error::SeenDesign(_)
            | Error::Generation(_) => true,
            Error::Stage { source, .. } => source.is_validation(),
            _ => false,
        }
    }

    pub fn is_numeric(&self) -> bool {
        match self {
            Error::Solver { .. } | Error::Numeric(_) | Error::UndefinedMetric(_) => true,
            Error::Stage { source, .. } => source.is_numeric(),
            _ => false,
        }
    }
}
