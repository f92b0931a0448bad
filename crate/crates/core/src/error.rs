use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("invalid shape {0:?}: every extent must be at least 1")]
    InvalidShape(Vec<usize>),

    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { shape: Vec<usize>, len: usize },

    #[error("shape mismatch: {left:?} vs {right:?}")]
    ShapeMismatch { left: Vec<usize>, right: Vec<usize> },

    #[error("expected a {expected}-D tensor, got shape {shape:?}")]
    Rank { expected: usize, shape: Vec<usize> },

    #[error("pixel value {value} at (channel {channel}, y {y}, x {x}) is outside [0, 1]")]
    Domain {
        channel: usize,
        y: usize,
        x: usize,
        value: f64,
    },

    #[error("height {height} and width {width} must both be divisible by {factor}")]
    IndivisibleDimensions {
        height: usize,
        width: usize,
        factor: usize,
    },

    #[error("channel count {channels} must be divisible by {divisor}")]
    IndivisibleChannels { channels: usize, divisor: usize },

    #[error("channel count mismatch: expected {expected}, found {found}")]
    ChannelMismatch { expected: usize, found: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("backward called without a recorded forward trace")]
    MissingTrace,

    #[error("dataset is empty")]
    EmptyDataset,
}

pub type Result<T> = std::result::Result<T, Error>;
