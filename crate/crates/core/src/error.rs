use std::path::PathBuf;

use thiserror::Error;

use crate::topology::TierKind;

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("invalid model profile `{name}`: {reason}")]
    InvalidModel { name: String, reason: String },

    #[error("invalid hardware profile `{name}`: {reason}")]
    InvalidHardware { name: String, reason: String },

    #[error("embedding dimension must be at least 1")]
    ZeroDimension,

    #[error("head count must be at least 1")]
    ZeroHeads,

    #[error("topology has no tiers")]
    EmptyTopology,

    #[error("tier {0} is defined more than once")]
    DuplicateTier(TierKind),

    #[error("tier {kind} has inverted or negative RTT range [{lower}, {upper}]")]
    InvalidRttRange { kind: TierKind, lower: f64, upper: f64 },

    #[error("tier {0} is not part of the topology")]
    TierAbsent(TierKind),

    #[error("tier {upper} is not reachable upward from {lower}")]
    NotUpstream { lower: TierKind, upper: TierKind },

    #[error("invalid workload: {0}")]
    InvalidWorkload(String),

    #[error("latency target must be positive, got {0} ms")]
    NonPositiveTarget(f64),

    #[error("vector dimension mismatch: index holds {expected}, got {actual}")]
    DimensionMismatch { expected: usize, actual: usize },

    #[error("invalid cache configuration: {0}")]
    InvalidCache(String),

    #[error("document index is empty")]
    EmptyDocumentIndex,

    #[error("invalid scenario: {0}")]
    InvalidScenario(String),

    #[error("percentile of an empty sample set")]
    EmptySamples,

    #[error("malformed record at line {line}: {reason}")]
    MalformedRecord { line: usize, reason: String },

    #[error(transparent)]
    Config(#[from] ConfigError),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("sweep point {index} ({parameter} = {value}) failed: {source}")]
    SweepPoint {
        index: usize,
        parameter: String,
        value: String,
        #[source]
        source: Box<SimError>,
    },
}

impl SimError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        SimError::Io { path: path.into(), source }
    }

    /// True for errors caused by the scenario or sweep definition rather than
    /// by the run itself.
    pub fn is_config_error(&self) -> bool {
        match self {
            SimError::Config(_)
            | SimError::InvalidScenario(_)
            | SimError::InvalidModel { .. }
            | SimError::InvalidHardware { .. }
            | SimError::EmptyTopology
            | SimError::DuplicateTier(_)
            | SimError::InvalidRttRange { .. }
            | SimError::InvalidWorkload(_)
            | SimError::InvalidCache(_) => true,
            SimError::SweepPoint { source, .. } => source.is_config_error(),
            _ => false,
        }
    }
}

/// Scenario file diagnostic. Always names the offending key; carries the
/// 1-based line when it can be located in the source text.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{}{key}: {message}", .line.map(|l| format!("line {l}: ")).unwrap_or_default())]
pub struct ConfigError {
    pub key: String,
    pub line: Option<usize>,
    pub message: String,
}

impl ConfigError {
    pub fn new(key: impl Into<String>, message: impl Into<String>) -> Self {
        ConfigError { key: key.into(), line: None, message: message.into() }
    }
}
