use std::path::PathBuf;

use thiserror::Error;

/// Which mask was empty when a boundary metric was requested.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EmptyMask {
    Prediction,
    GroundTruth,
    Both,
}

impl std::fmt::Display for EmptyMask {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            EmptyMask::Prediction => write!(f, "prediction"),
            EmptyMask::GroundTruth => write!(f, "ground truth"),
            EmptyMask::Both => write!(f, "prediction and ground truth"),
        }
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("domain error: {0}")]
    Domain(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("not found: {0}")]
    NotFound(String),

    #[error("corrupt data in {path}: {reason}")]
    Corruption { path: PathBuf, reason: String },

    #[error("metric undefined: {0} mask is empty")]
    UndefinedMetric(EmptyMask),

    #[error("step too large: updated prediction {mu_new} left (0, 1)")]
    StepTooLarge { mu_new: f64 },

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn domain(msg: impl Into<String>) -> Self {
        Error::Domain(msg.into())
    }

    pub(crate) fn config(msg: impl Into<String>) -> Self {
        Error::Config(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            return Error::NotFound(path.display().to_string());
        }
        Error::Io { path, source }
    }

    pub(crate) fn corrupt(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Corruption {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Short machine-readable tag for the error class.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::Domain(_) => "domain",
            Error::Config(_) => "config",
            Error::NotFound(_) => "not_found",
            Error::Corruption { .. } => "corruption",
            Error::UndefinedMetric(_) => "undefined_metric",
            Error::StepTooLarge { .. } => "step_too_large",
            Error::Io { .. } => "io",
            Error::Json(_) => "json",
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
