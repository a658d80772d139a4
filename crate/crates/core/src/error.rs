use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration invariant is violated; the message names it.
    #[error("configuration error: {0}")]
    Config(String),

    #[error("degenerate signal: {0}")]
    DegenerateSignal(String),

    #[error("cosine similarity undefined: zero-norm input")]
    UndefinedSimilarity,

    #[error("insufficient valid channels: need at least {needed}, found {found}")]
    InsufficientChannels { needed: usize, found: usize },

    #[error("channel selection failed: {0}")]
    Selection(String),

    #[error("length {found} is not usable: {remedy}")]
    Length { found: usize, remedy: String },

    #[error("record refused by quality gate: {0}")]
    QualityGate(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error("wav: {0}")]
    Wav(#[from] hound::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}
