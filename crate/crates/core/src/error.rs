use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("input too short: {0}")]
    InputTooShort(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("non-finite value produced by {0}")]
    NonFinite(String),

    #[error("silent noise clip")]
    SilentNoise,

    #[error("silent clean clip")]
    SilentClean,

    #[error("sample too short to split ({0} frames)")]
    TooShortToSplit(usize),

    #[error("contrastive batch too small: need at least 2 items, got {0}")]
    BatchTooSmall(usize),

    #[error("score undefined at zero variance (t = {0})")]
    ZeroVariance(f64),

    #[error("unsupported wav: {0}")]
    UnsupportedWav(String),

    #[error("checkpoint format: {0}")]
    Format(String),

    #[error("config: {0}")]
    Config(String),

    #[error("manifest: {0}")]
    Manifest(String),

    #[error("training aborted: {0}")]
    Training(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Wav(#[from] hound::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
