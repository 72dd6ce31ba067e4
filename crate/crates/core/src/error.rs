use thiserror::Error;

/// Errors produced across the toolkit.
#[derive(Debug, Error)]
pub enum Error {
    #[error("line {line}: malformed column line {content:?} (expected \"token<TAB>tag\")")]
    MalformedLine { line: usize, content: String },

    #[error("line {line}: unknown tag {tag:?}")]
    UnknownTag { line: usize, tag: String },

    #[error("invalid tag {0:?}")]
    InvalidTag(String),

    #[error("invalid tag set: {0}")]
    InvalidTagSet(String),

    #[error("sentence of {len} tokens does not fit max_len {max_len} (needs len + 2)")]
    Truncation { len: usize, max_len: usize },

    #[error("unknown preset {name:?}; valid presets: {valid}")]
    UnknownPreset { name: String, valid: String },

    #[error("invalid encoder config: {0}")]
    InvalidConfig(String),

    #[error("sequence length {len} exceeds max_position {max}")]
    LengthOverflow { len: usize, max: usize },

    #[error("input length mismatch: {0}")]
    ShapeMismatch(String),

    #[error("{what} index {index} out of range (< {bound})")]
    IndexOutOfRange {
        what: &'static str,
        index: usize,
        bound: usize,
    },

    #[error("no tag sequence is allowed by the constraint mask")]
    NoAllowedPath,

    #[error("no maskable position in sequence")]
    NothingToMask,

    #[error("corpus too small: {0}")]
    CorpusTooSmall(String),

    #[error("batch has no labeled positions")]
    EmptyBatch,

    #[error("non-finite loss at step {step}")]
    NonFiniteLoss { step: usize },

    #[error("sentence {index}: {msg}")]
    Alignment { index: usize, msg: String },

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("config: {0}")]
    Config(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
