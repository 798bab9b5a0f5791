//! Error type shared by every module of the crate.

use serde::Serialize;
use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// Input shapes or values violate an operation's preconditions.
    #[error("rejected input: {0}")]
    RejectedInput(String),

    /// A decomposition could not be formed or inverted.
    #[error("degenerate decomposition: {reason} (condition number {condition:.3e})")]
    DegenerateDecomposition { reason: String, condition: f64 },

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("insufficient neighbors: requested {requested}, only {available} voxels satisfy the distance constraint{}", component.map(|c| format!(" (component {c})")).unwrap_or_default())]
    InsufficientNeighbors {
        requested: usize,
        available: usize,
        component: Option<usize>,
    },

    #[error("degenerate feature: zero variance in trial {trial}, channel {channel}")]
    DegenerateFeature { trial: usize, channel: usize },

    #[error("no epochs left: all {rejected} trials were rejected")]
    EmptyEpochs { rejected: usize },

    #[error("malformed file: {0}")]
    Format(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn rejected(msg: impl Into<String>) -> Self {
        Error::RejectedInput(msg.into())
    }

    pub fn config(msg: impl Into<String>) -> Self {
        Error::Configuration(msg.into())
    }

    /// Stable machine-readable tag for the variant.
    pub fn kind(&self) -> &'static str {
        match self {
            Error::RejectedInput(_) => "rejected_input",
            Error::DegenerateDecomposition { .. } => "degenerate_decomposition",
            Error::Configuration(_) => "configuration",
            Error::InsufficientNeighbors { .. } => "insufficient_neighbors",
            Error::DegenerateFeature { .. } => "degenerate_feature",
            Error::EmptyEpochs { .. } => "empty_epochs",
            Error::Format(_) => "format",
            Error::Io(_) => "io",
            Error::Json(_) => "json",
        }
    }

    /// JSON document written to stderr by the CLI on failure.
    pub fn to_json(&self) -> String {
        #[derive(Serialize)]
        struct Payload<'a> {
            error: &'a str,
            message: String,
        }
        serde_json::to_string(&Payload {
            error: self.kind(),
            message: self.to_string(),
        })
        .unwrap_or_else(|_| format!("{{\"error\":\"{}\"}}", self.kind()))
    }
}
