use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Every failure the library can report.
///
/// Variants map onto the CLI exit codes: configuration problems exit with 2,
/// numerical failures with 3 and infeasible problems with 4.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid order: {0}")]
    InvalidOrder(String),
    #[error("group validation failed: {0}")]
    Validation(String),
    #[error("resource limit: {0}")]
    Resource(String),
    #[error("mismatch: {0}")]
    Mismatch(String),
    #[error("wrong variant: {0}")]
    WrongVariant(String),
    #[error("numerical failure: {0}")]
    Numerical(String),
    #[error("training diverged at epoch {epoch}")]
    Diverged { epoch: usize, trace: Box<crate::gcnn::TrainingTrace> },
    #[error("infeasible: {0}")]
    Infeasible(String),
    #[error("parse error at byte {offset}: {message}")]
    Parse { offset: usize, message: String },
    #[error("config error: {0}")]
    Config(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    /// An error raised inside a named stage of an experiment run.
    #[error("stage '{stage}' failed: {source}")]
    Stage { stage: String, source: Box<Error> },
}

impl Error {
    /// Short machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::InvalidOrder(_) => "invalid_order",
            Error::Validation(_) => "validation",
            Error::Resource(_) => "resource",
            Error::Mismatch(_) => "mismatch",
            Error::WrongVariant(_) => "wrong_variant",
            Error::Numerical(_) => "numerical",
            Error::Diverged { .. } => "diverged",
            Error::Infeasible(_) => "infeasible",
            Error::Parse { .. } => "parse",
            Error::Config(_) => "config",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
            Error::Csv(_) => "csv",
            Error::Stage { source, .. } => source.kind(),
        }
    }

    /// Process exit code used by the command-line runner.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::Numerical(_) | Error::Diverged { .. } | Error::Resource(_) => 3,
            Error::Infeasible(_) => 4,
            _ => 2,
        }
    }
}

impl Error {
    /// Tags the error with the experiment stage it came from.
    pub fn in_stage(self, stage: impl Into<String>) -> Error {
        match self {
            e @ Error::Stage { .. } => e,
            e => Error::Stage { stage: stage.into(), source: Box::new(e) },
        }
    }

    pub fn stage(&self) -> Option<&str> {
        match self {
            Error::Stage { stage, .. } => Some(stage),
            _ => None,
        }
    }

    pub fn to_json(&self) -> ErrorJson {
        let (message, epoch) = match self {
            Error::Stage { source, .. } => (source.to_string(), source.epoch()),
            e => (e.to_string(), e.epoch()),
        };
        ErrorJson { kind: self.kind().into(), message, exit_code: self.exit_code(), stage: self.stage().map(String::from), epoch }
    }

    fn epoch(&self) -> Option<usize> {
        match self {
            Error::Diverged { epoch, .. } => Some(*epoch),
            Error::Stage { source, .. } => source.epoch(),
            _ => None,
        }
    }
}

/// Machine-readable form of an [`Error`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ErrorJson {
    pub kind: String,
    pub message: String,
    pub exit_code: i32,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub stage: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub epoch: Option<usize>,
}

pub type Result<T> = std::result::Result<T, Error>;
