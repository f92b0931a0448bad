//! YCbCr decoupled attention: an early-stage feature block for camouflage-robust detectors.
//!
//! The block converts RGB to YCbCr, moves spatial detail into channels with a
//! pixel-unshuffle, filters each channel in isolation with a depthwise convolution and
//! reweights the resulting channels with attention driven by per-channel mean and
//! variance. Everything runs in `f64` with hand-written backward passes.

pub mod autograd;
pub mod colorspace;
mod error;
pub mod ica;
pub mod model;
pub mod stem;
pub mod tensor;

pub use colorspace::{ImageRgb, ImageYCbCr};
pub use error::{Error, Result};
pub use model::{init_block, BlockConfig, YcdaBlock};
pub use tensor::Tensor;
