//! Crate-wide error type.

use thiserror::Error;

/// A malformed record encountered while parsing a device-event file.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RecordIssue {
    /// 1-based line number in the source file.
    pub line: u64,
    pub message: String,
}

impl std::fmt::Display for RecordIssue {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("malformed event records:\n{}", format_issues(.0))]
    MalformedRecords(Vec<RecordIssue>),

    #[error("trace for device {device:?} has no live window (never available)")]
    NoLiveWindow { device: String },

    #[error("trace length mismatch: expected {expected} steps, device {device:?} has {actual}")]
    TraceLengthMismatch {
        device: String,
        expected: usize,
        actual: usize,
    },

    #[error("at least {needed} traces required, got {got}")]
    NotEnoughTraces { needed: usize, got: usize },

    #[error("empty group specification")]
    EmptyGroupSpec,

    #[error("histogram requires at least one trace with a live window")]
    NoValidTraces,

    #[error("RTT matrix is not symmetric at ({i},{j}): {a} vs {b}")]
    AsymmetricRtt { i: usize, j: usize, a: f64, b: f64 },

    #[error("unknown node {0}")]
    UnknownNode(u32),

    #[error("no metadata snapshot for node {node} at or before round {round}")]
    NoSnapshot { node: u32, round: u64 },

    #[error("correlation of a node with itself is undefined (node {0})")]
    SelfCorrelation(u32),

    #[error("telemetry history for node {0} is empty; seed it with a prior first")]
    EmptyHistory(u32),

    #[error("data partition for node {0} is empty")]
    EmptyPartition(u32),

    #[error("parameter dimension mismatch: expected {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid partition: {0}")]
    InvalidPartition(String),

    #[error("configuration invalid:\n{}", .0.join("\n"))]
    InvalidConfig(Vec<String>),

    #[error("rejected configuration: {0}")]
    RejectedConfiguration(String),

    #[error("log comparison failed: {0}")]
    CompareMismatch(String),

    #[error("unknown theory check {name:?}; available: {}", available.join(", "))]
    UnknownCheck { name: String, available: Vec<String> },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

fn format_issues(issues: &[RecordIssue]) -> String {
    issues
        .iter()
        .map(|i| format!("  {i}"))
        .collect::<Vec<_>>()
        .join("\n")
}

pub type Result<T> = std::result::Result<T, Error>;
