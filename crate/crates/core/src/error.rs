use thiserror::Error;

use crate::tensor::Shape;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("data length {len} does not match shape {shape}")]
    DataLength { shape: Shape, len: usize },

    #[error("tensor dimensions must be positive, got {0}")]
    ZeroDimension(Shape),

    #[error("shape mismatch: {left} vs {right}")]
    ShapeMismatch { left: Shape, right: Shape },

    #[error("channel mismatch: expected {expected}, got {actual}")]
    ChannelMismatch { expected: usize, actual: usize },

    #[error("spatial mismatch: {left} vs {right}")]
    SpatialMismatch { left: Shape, right: Shape },

    #[error("convolution output would be empty for input {input} (kernel {kernel_h}x{kernel_w}, stride {stride}, padding {padding})")]
    EmptyOutput {
        input: Shape,
        kernel_h: usize,
        kernel_w: usize,
        stride: usize,
        padding: usize,
    },

    #[error("invalid convolution parameters: {0}")]
    InvalidConv(String),

    #[error("max pooling needs even spatial dims, got {0}")]
    OddDimension(Shape),

    #[error("cannot concatenate an empty tensor list")]
    EmptyConcat,

    #[error("input {height}x{width} is not divisible by {divisor}")]
    Indivisible {
        height: usize,
        width: usize,
        divisor: usize,
    },

    #[error("invalid network: {0}")]
    InvalidNetwork(String),

    #[error("invalid cache configuration: {0}")]
    InvalidCacheConfig(String),

    #[error("cache entry missing for edge `{0}`")]
    MissingCacheEntry(String),

    #[error("cache entry for edge `{edge}` has shape {actual}, expected {expected}")]
    CacheShape {
        edge: String,
        expected: Shape,
        actual: Shape,
    },

    #[error("invalid policy: {0}")]
    InvalidPolicy(String),

    #[error("policy invariant violated: {0}")]
    PolicyState(String),

    #[error("frame {index} carries no motion field")]
    MissingMotion { index: usize },

    #[error("sequence is empty")]
    EmptySequence,

    #[error("need at least {needed} frames, got {got}")]
    TooFewFrames { needed: usize, got: usize },

    #[error("cache is empty")]
    EmptyCache,

    #[error("image {shape} is smaller than the {window}x{window} window")]
    WindowTooLarge { shape: Shape, window: usize },

    #[error("invalid scene: {0}")]
    InvalidScene(String),

    #[error("sequence file: {0}")]
    SequenceFormat(String),

    #[error("i/o: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}
