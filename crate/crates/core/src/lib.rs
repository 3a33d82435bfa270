//! Keyword spotting with broadcasted residual blocks and squeeze-and-excitation
//! attention.
//!
//! The crate is organised bottom-up:
//!
//! - [`tensor`]: dense tensors with reverse-mode differentiation
//! - [`dsp`]: WAV loading and 40-band log-Mel features
//! - [`nn`]: convolution, normalization, attention and residual blocks
//! - [`model`]: network assembly, parameter counting and checkpoints
//! - [`data`]: corpus scanning, silence/noise generation, batching
//! - [`train`]: loss, optimizers, schedule, training and evaluation

pub mod data;
pub mod dsp;
pub mod error;
pub mod model;
pub mod nn;
pub mod tensor;
pub mod train;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use tensor::{Element, Tensor};
