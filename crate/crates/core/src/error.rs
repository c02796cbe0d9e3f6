use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("coordinate ({x}, {y}) lies outside the unit square")]
    CoordinateOutOfRange { x: f64, y: f64 },

    #[error("interpolation nodes must be strictly increasing and distinct")]
    DuplicateNodes,

    #[error("configuration mismatch: {0}")]
    ConfigMismatch(String),

    #[error("decoded sample no longer matches the model it was produced from")]
    StaleCache,

    #[error("shape mismatch: expected {expected}, got {got}")]
    ShapeMismatch { expected: String, got: String },

    #[error("image dimensions differ: {0}x{1} vs {2}x{3}")]
    DimensionMismatch(usize, usize, usize, usize),

    #[error("image error: {0}")]
    Image(String),

    #[error("non-finite loss at step {step} (parameter group: {group})")]
    NonFiniteLoss { step: usize, group: &'static str },

    #[error("shift ({dx}, {dy}) exceeds radius {radius}")]
    ShiftOutOfRange { dx: i32, dy: i32, radius: i32 },

    #[error("sample at pixel ({x}, {y}) violates the {margin}px boundary margin")]
    MarginViolation { x: usize, y: usize, margin: usize },

    #[error(transparent)]
    Format(#[from] FormatError),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Failures while reading an HSHF model stream.
#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FormatError {
    #[error("bad magic bytes {0:?}")]
    BadMagic([u8; 4]),

    #[error("unsupported format version {0}")]
    UnsupportedVersion(u32),

    #[error("stream truncated: needed {needed} bytes, {available} available")]
    Truncated { needed: usize, available: usize },

    #[error("non-finite value at payload index {0}")]
    NonFinite(usize),

    #[error("invalid header: {0}")]
    InvalidHeader(String),

    #[error("{0} trailing bytes after model payload")]
    TrailingBytes(usize),
}
