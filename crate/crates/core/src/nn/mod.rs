//! Layers over activations laid out as `[batch, channel, frequency, time]`.

mod attention;
mod block;
mod conv;
mod dropout;
mod linear;
mod norm;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::Result;
use crate::tensor::{uniform_vec, Element, Tensor};

pub use attention::{SqueezeExcite, TfwSqueezeExcite};
pub use block::{BcResBlock, BlockKind, BlockSpec};
pub use conv::{conv2d, Conv2d, ConvSpec};
pub use dropout::{dropout, Dropout};
pub use linear::Linear;
pub use norm::{batchnorm2d, subspectral_norm, BatchNorm2d, NormState, SubSpectralNorm};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Per-forward-pass settings shared by every layer.
#[derive(Debug, Clone, Copy)]
pub struct ForwardCtx {
    pub mode: Mode,
    /// Seed for this pass's dropout masks; each dropout layer mixes in its own id.
    pub seed: u64,
}

impl ForwardCtx {
    pub fn train(seed: u64) -> Self {
        ForwardCtx {
            mode: Mode::Train,
            seed,
        }
    }

    pub fn eval() -> Self {
        ForwardCtx {
            mode: Mode::Eval,
            seed: 0,
        }
    }
}

/// A named learnable tensor.
#[derive(Debug, Clone)]
pub struct Param<E: Element> {
    name: String,
    value: Tensor<E>,
    /// whether weight decay applies (conv/FC weights only)
    decay: bool,
}

impl<E: Element> Param<E> {
    pub fn new(name: impl Into<String>, shape: &[usize], data: Vec<E>, decay: bool) -> Result<Self> {
        Ok(Param {
            name: name.into(),
            value: Tensor::parameter(shape, data)?,
            decay,
        })
    }

    /// He-uniform weights: U(-b, b) with b = sqrt(6 / fan_in).
    pub fn he_uniform(name: impl Into<String>, shape: &[usize], fan_in: usize, seed: u64) -> Result<Self> {
        let name = name.into();
        let bound = (6.0 / fan_in as f64).sqrt();
        let n = shape.iter().product();
        let data = uniform_vec(n, -bound, bound, mix_seed(seed, &name))
            .into_iter()
            .map(E::of)
            .collect();
        Self::new(name, shape, data, true)
    }

    pub fn constant(name: impl Into<String>, shape: &[usize], value: f64) -> Result<Self> {
        let n = shape.iter().product();
        Self::new(name, shape, vec![E::of(value); n], false)
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn value(&self) -> &Tensor<E> {
        &self.value
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn numel(&self) -> usize {
        self.value.numel()
    }

    pub fn decays(&self) -> bool {
        self.decay
    }

    pub fn grad(&self) -> Option<Vec<E>> {
        self.value.grad()
    }

    /// Replaces the value with a fresh leaf; the old tensor (and any graph
    /// that captured it) is left untouched.
    pub fn set(&mut self, data: Vec<E>) -> Result<()> {
        self.value = Tensor::parameter(self.value.shape(), data)?;
        Ok(())
    }
}

/// Anything that owns parameters and normalization statistics.
pub trait Layer<E: Element> {
    fn params(&self) -> Vec<&Param<E>>;
    fn params_mut(&mut self) -> Vec<&mut Param<E>>;
    fn norm_states(&self) -> Vec<&NormState<E>> {
        Vec::new()
    }
}

/// Deterministic 64-bit seed from a base seed and a name.
pub fn mix_seed(seed: u64, name: &str) -> u64 {
    // FNV-1a over the name, then a splitmix64 finalizer with the seed
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for b in name.bytes() {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    splitmix(h ^ seed.wrapping_mul(0x9e37_79b9_7f4a_7c15))
}

pub(crate) fn splitmix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

pub(crate) fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

#[cfg(test)]
mod tests;
