use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("batch-size error: {0}")]
    BatchSize(String),

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("evaluation error: {0}")]
    Evaluation(String),

    #[error("ingestion error at row {row}: {detail}")]
    Ingestion { row: usize, detail: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("index out of range: {0}")]
    Index(String),

    #[error("label error: {0}")]
    Label(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(String),

    #[error("non-finite loss at step {step}: {detail}")]
    NonFiniteLoss { step: u64, detail: String },

    #[error("missing file {path}: {source}")]
    MissingFile {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension {
            op,
            detail: detail.into(),
        }
    }

    /// Stable machine-readable class used by the CLI diagnostic line.
    pub fn class(&self) -> &'static str {
        match self {
            Error::Dimension { .. } => "dimension",
            Error::Config(_) => "config",
            Error::BatchSize(_) => "batch-size",
            Error::Contract(_) => "contract",
            Error::Evaluation(_) => "evaluation",
            Error::Ingestion { .. } => "ingestion",
            Error::Schema(_) => "schema",
            Error::Index(_) => "index",
            Error::Label(_) => "label",
            Error::UndefinedMetric(_) => "undefined-metric",
            Error::NonFiniteLoss { .. } => "non-finite-loss",
            Error::MissingFile { .. } => "missing-file",
            Error::Io(_) => "io",
            Error::Parse(_) => "parse",
        }
    }

    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Config(_) | Error::Parse(_) => 2,
            Error::MissingFile { .. } | Error::Io(_) => 3,
            Error::Schema(_) | Error::Ingestion { .. } | Error::Label(_) => 4,
            Error::NonFiniteLoss { .. } => 5,
            _ => 1,
        }
    }
}

impl From<toml::de::Error> for Error {
    fn from(e: toml::de::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<toml::ser::Error> for Error {
    fn from(e: toml::ser::Error) -> Self {
        Error::Parse(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        let row = e.position().map(|p| p.record() as usize).unwrap_or(0);
        Error::Ingestion {
            row,
            detail: e.to_string(),
        }
    }
}
