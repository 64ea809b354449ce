use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {}", .0.join("; "))]
    InvalidConfig(Vec<String>),

    #[error("truncated-normal sampler exhausted {draws} draws without an accepted sample")]
    SamplerExhausted { draws: usize },

    #[error("dimension mismatch for {what}: expected {expected}, got {got}")]
    Dimension {
        what: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("invalid action: {0}")]
    InvalidAction(String),

    #[error("unsupported objective: {0}")]
    UnsupportedObjective(String),

    #[error("unsupported reward variant: {0}")]
    UnsupportedVariant(String),

    #[error("solver diverged: {0}")]
    SolverDiverged(String),

    #[error("slot {slot}: {source}")]
    AtSlot {
        slot: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("insufficient samples: have {have}, need {need}")]
    InsufficientSamples { have: usize, need: usize },

    #[error("non-finite value: {0}")]
    NonFinite(String),

    #[error("parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
