use std::path::PathBuf;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A caller broke a documented precondition (shapes, tags, indices).
    #[error("contract violation: {0}")]
    Contract(String),

    #[error("shape mismatch in {op}: {left:?} vs {right:?}")]
    ShapeMismatch { op: &'static str, left: Vec<usize>, right: Vec<usize> },

    #[error("precision mismatch in {op}")]
    PrecisionMismatch { op: &'static str },

    /// Lemma check failed: the tolerance condition held but predictions differ.
    #[error(
        "theory violation on input {id}: gamma {gamma:e} >= 2*delta {delta:e} but pred32 {pred32} != pred16 {pred16}"
    )]
    TheoryViolation { id: usize, delta: f64, gamma: f64, pred32: usize, pred16: usize },

    #[error("{path}: wrong IDX magic {found} (expected {expected})")]
    WrongMagic { path: PathBuf, found: u32, expected: u32 },

    #[error("{path}: truncated payload ({found} bytes, expected {expected})")]
    Truncated { path: PathBuf, found: usize, expected: usize },

    #[error("image count {images} does not match label count {labels}")]
    CountMismatch { images: usize, labels: usize },

    #[error("bad model file magic {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported model file version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("model file payload length mismatch: {0}")]
    PayloadLength(String),

    #[error("invalid config: {0}")]
    Config(String),

    #[error("training became unstable: {0}")]
    Unstable(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Error {
        Error::Contract(msg.into())
    }
}
