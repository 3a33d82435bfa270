//! Channel attention (SE) and per-time-frame frequency attention (tfwSE).

use super::{Layer, Linear, Param};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Squeeze-and-excitation over channels.
///
/// Squeeze: `z_c` is the mean of channel `c` over frequency and time.
/// Excite: `y = sigmoid(W2 relu(W1 z + b1) + b2)`, one gate per channel,
/// broadcast over frequency and time.
#[derive(Debug, Clone)]
pub struct SqueezeExcite<E: Element> {
    pub fc1: Linear<E>,
    pub fc2: Linear<E>,
}

impl<E: Element> SqueezeExcite<E> {
    pub const MIN_HIDDEN: usize = 4;

    pub fn hidden_width(channels: usize, ratio: usize) -> usize {
        (channels / ratio.max(1)).max(Self::MIN_HIDDEN)
    }

    pub fn new(name: &str, channels: usize, ratio: usize, seed: u64) -> Result<Self> {
        let h = Self::hidden_width(channels, ratio);
        Ok(SqueezeExcite {
            fc1: Linear::new(&format!("{name}.fc1"), channels, h, seed)?,
            fc2: Linear::new(&format!("{name}.fc2"), h, channels, seed)?,
        })
    }

    pub fn channels(&self) -> usize {
        self.fc1.inputs()
    }

    /// `[N, C]` channel means.
    pub fn squeeze(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let s = x.shape();
        if s.len() != 4 || s[1] != self.channels() {
            return Err(Error::ShapeMismatch {
                op: "se_block",
                lhs: s.to_vec(),
                rhs: vec![0, self.channels(), 0, 0],
            });
        }
        x.mean(&[2, 3], false)
    }

    /// `[N, C]` gates in (0, 1).
    pub fn gates(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let z = self.squeeze(x)?;
        let hidden = self.fc1.forward(&z)?.relu();
        Ok(self.fc2.forward(&hidden)?.sigmoid())
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let s = x.shape();
        let gates = self.gates(x)?.reshape(&[s[0], s[1], 1, 1])?;
        x.mul(&gates)
    }
}

impl<E: Element> Layer<E> for SqueezeExcite<E> {
    fn params(&self) -> Vec<&Param<E>> {
        let mut p = self.fc1.params();
        p.extend(self.fc2.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        let mut p = self.fc1.params_mut();
        p.extend(self.fc2.params_mut());
        p
    }
}

/// Time-frame frequency-wise squeeze-and-excitation.
///
/// For every time frame `t`: `z_ft` is the mean over channels, and the same
/// two FC layers map `z_t` to per-frequency gates that are broadcast over
/// channels.
#[derive(Debug, Clone)]
pub struct TfwSqueezeExcite<E: Element> {
    pub fc1: Linear<E>,
    pub fc2: Linear<E>,
}

impl<E: Element> TfwSqueezeExcite<E> {
    pub const MIN_HIDDEN: usize = 2;

    pub fn hidden_width(bins: usize, ratio: usize) -> usize {
        (bins / ratio.max(1)).max(Self::MIN_HIDDEN)
    }

    pub fn new(name: &str, bins: usize, ratio: usize, seed: u64) -> Result<Self> {
        let h = Self::hidden_width(bins, ratio);
        Ok(TfwSqueezeExcite {
            fc1: Linear::new(&format!("{name}.fc1"), bins, h, seed)?,
            fc2: Linear::new(&format!("{name}.fc2"), h, bins, seed)?,
        })
    }

    pub fn bins(&self) -> usize {
        self.fc1.inputs()
    }

    /// `[N, F, T]` channel means.
    pub fn squeeze(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let s = x.shape();
        if s.len() != 4 || s[2] != self.bins() {
            return Err(Error::ShapeMismatch {
                op: "tfwse_block",
                lhs: s.to_vec(),
                rhs: vec![0, 0, self.bins(), 0],
            });
        }
        x.mean(&[1], false)
    }

    /// `[N, F, T]` gates in (0, 1).
    pub fn gates(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let z = self.squeeze(x)?;
        let (n, f, t) = (z.shape()[0], z.shape()[1], z.shape()[2]);
        // one row per (batch, frame)
        let rows = z.permute(&[0, 2, 1])?.reshape(&[n * t, f])?;
        let hidden = self.fc1.forward(&rows)?.relu();
        let g = self.fc2.forward(&hidden)?.sigmoid();
        g.reshape(&[n, t, f])?.permute(&[0, 2, 1])
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        let s = x.shape();
        let gates = self.gates(x)?.reshape(&[s[0], 1, s[2], s[3]])?;
        x.mul(&gates)
    }
}

impl<E: Element> Layer<E> for TfwSqueezeExcite<E> {
    fn params(&self) -> Vec<&Param<E>> {
        let mut p = self.fc1.params();
        p.extend(self.fc2.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        let mut p = self.fc1.params_mut();
        p.extend(self.fc2.params_mut());
        p
    }
}
