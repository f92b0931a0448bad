//! Analytic gradients for the block, a finite-difference checker and a toy trainer.

pub mod check;
pub mod ops;
mod tape;
pub mod train;

pub use check::{clear_relu_kink, grad_check, relative_error, GradReport};
pub use tape::{backward, forward_traced, Gradients, Tape};
pub use train::{
    train_toy, GroupAlpha, LabeledImage, LinearHead, Saliency, ToyDataset, ToyOutcome,
    TrainConfig,
};
