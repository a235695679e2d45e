use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("schema error: {0}")]
    Schema(String),

    #[error("config error: {0}")]
    Config(String),

    #[error("empty dataset")]
    EmptyDataset,

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("{path}:{line}: {message}")]
    Parse { path: String, line: u64, message: String },

    #[error("non-finite value {value} for feature {feature}")]
    NonFinite { feature: usize, value: f64 },

    #[error("feature count mismatch: expected {expected}, got {got}")]
    FeatureCount { expected: usize, got: usize },

    #[error("interchange validation failed for tree {tree}, node {node}: {message}")]
    Interchange { tree: usize, node: usize, message: String },

    #[error("interchange document: {0}")]
    Document(String),

    #[error("rule set is inconsistent: {fired} rules fired for tree {tree_id}")]
    RuleConsistency { tree_id: usize, fired: usize },

    #[error("invalid rule set: {0}")]
    RuleSet(String),

    #[error("ROC needs both classes: {positives} positive and {negatives} negative targets")]
    SingleClass { positives: usize, negatives: usize },

    #[error("empty group")]
    EmptyGroup,

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
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// True for errors caused by bad inputs or configuration rather than by
    /// a failure while processing valid inputs.
    pub fn is_input_error(&self) -> bool {
        matches!(
            self,
            Error::Schema(_)
                | Error::Config(_)
                | Error::EmptyDataset
                | Error::InvalidParam(_)
                | Error::FeatureCount { .. }
                | Error::EmptyGroup
        )
    }
}
