use thiserror::Error;

use crate::numerics::NumericsError;

pub type Result<T, E = CicadaError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum CicadaError {
    #[error(transparent)]
    Numerics(#[from] NumericsError),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("series of length {len} is too short for window length {window}")]
    SeriesTooShort { len: usize, window: usize },
    #[error("{windows} windows cannot fill {segments} segments")]
    TooFewWindows { windows: usize, segments: usize },
    #[error("segment has no windows")]
    EmptySegment,
    #[error("batch has no windows")]
    EmptyBatch,
    #[error("expert {expert} has no fitted statistics")]
    MissingStats { expert: String },
    #[error("non-finite gradient for expert {expert}")]
    NonFiniteGradient { expert: String },
    #[error("non-finite {component} loss at epoch {epoch}{}", expert.as_ref().map(|e| format!(" (expert {e})")).unwrap_or_default())]
    NonFiniteLoss {
        epoch: usize,
        component: &'static str,
        expert: Option<String>,
    },
    #[error("no adapted parameters recorded for expert {expert}, meta-domain {domain}")]
    NoAdaptedHistory { expert: String, domain: usize },
    #[error("dimension mismatch: model expects {expected} variables, data has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("labels are required for this operation")]
    MissingLabels,
    #[error("no scores to threshold")]
    EmptyScores,
    #[error("metric needs both classes present")]
    SingleClass,
    #[error("metric needs at least one positive label")]
    NoPositives,
    #[error("model file version {found} is not supported (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("corrupt model file: {0}")]
    CorruptFile(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
