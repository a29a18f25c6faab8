use thiserror::Error;

use crate::imaging::Roi;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("image has zero width or height")]
    EmptyImage,
    #[error("shape mismatch: expected {expected:?}, found {found:?}")]
    ShapeMismatch {
        expected: (usize, usize),
        found: (usize, usize),
    },
    #[error("mask value {0} is neither 0 nor 255")]
    NonBinaryMask(u8),
    #[error("{roi:?} exceeds {width}x{height} frame")]
    RoiOutOfBounds { roi: Roi, width: usize, height: usize },
    #[error("image {path}: {message}")]
    Image { path: String, message: String },

    #[error("scan row {y} out of range for mask height {height}")]
    RowOutOfRange { y: usize, height: usize },
    #[error("found {found} wire intervals, expected {expected}")]
    EndpointCountMismatch { found: usize, expected: usize },
    #[error("wire boundary closes before it opens at x={x}")]
    MalformedAlternation { x: usize },
    #[error("degenerate box for wire {index}: x_left {x_left} >= x_right {x_right}")]
    DegenerateBox {
        index: usize,
        x_left: usize,
        x_right: usize,
    },
    #[error("image must be at least 2 pixels wide for an x-gradient")]
    ImageTooNarrow,

    #[error("training requires a minimum of five correct samples, got {0}")]
    SampleCountTooLow(usize),
    #[error("wire count inconsistent: expected {expected}, found {found}")]
    WireCountInconsistent { expected: usize, found: usize },
    #[error("training sample {sample} of view {view} could not be segmented (image not clear)")]
    TrainingSampleUnclear { view: String, sample: String },

    #[error("empty patch")]
    EmptyPatch,
    #[error("cosine similarity of a zero vector")]
    ZeroVector,
    #[error("embedding length mismatch: {0} vs {1}")]
    EmbeddingLength(usize, usize),

    #[error("profile version mismatch: {0}")]
    ProfileVersionMismatch(String),
    #[error("unsupported profile format version {0}")]
    FormatVersionUnsupported(u32),
    #[error("corrupt profile: {0}")]
    CorruptProfile(String),
    #[error("expected {expected} frames (one per view), got {found}")]
    ViewCountMismatch { expected: usize, found: usize },

    #[error("invalid harness spec: {0}")]
    SpecInvalid(String),
    #[error("index {index} out of range for {len} wires")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}
