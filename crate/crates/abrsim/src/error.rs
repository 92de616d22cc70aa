use thiserror::Error;

/// Errors produced by simulator construction and evaluation.
#[derive(Debug, Error)]
pub enum Error {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("parse error: {0}")]
    Parse(String),

    #[error("manifest invariant violated in field `{field}`: {reason}")]
    Manifest { field: String, reason: String },

    #[error("trace invariant violated: {0}")]
    Trace(String),

    #[error("insufficient samples: need at least {need}, got {got}")]
    InsufficientSamples { need: usize, got: usize },

    #[error("invalid quality level {level} for a {count}-level ladder")]
    InvalidLevel { level: usize, count: usize },

    #[error("invalid parameter: {0}")]
    InvalidParam(String),

    #[error("lookahead explosion: {levels}^{horizon} sequences exceed the enumeration cap")]
    HorizonExplosion { levels: usize, horizon: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("manifest has unbounded segment count; {0} requires a bounded video")]
    UnboundedVideo(String),

    #[error("training data contains a single class; need both exit and continue rows")]
    SingleClass,

    #[error("non-finite loss during training at epoch {epoch}")]
    NonFiniteLoss { epoch: usize },

    #[error("linear system is singular even after jitter")]
    SingularSystem,

    #[error("unsupported artifact version {found} (this build reads version {supported})")]
    UnsupportedVersion { found: u32, supported: u32 },

    #[error("corrupt artifact: {0}")]
    Corrupt(String),
}

pub type Result<T> = std::result::Result<T, Error>;
