use rand::Rng;

use super::{mix_seed, rng, ForwardCtx, Mode};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

/// Inverted dropout. Eval mode returns `x` itself.
pub fn dropout<E: Element>(x: &Tensor<E>, p: f64, mode: Mode, seed: u64) -> Result<Tensor<E>> {
    if !(0.0..1.0).contains(&p) {
        return Err(Error::InvalidArgument(format!("dropout probability {p} not in [0, 1)")));
    }
    if mode == Mode::Eval || p == 0.0 {
        return Ok(x.clone());
    }
    let keep = E::of(1.0 / (1.0 - p));
    let mut r = rng(seed);
    let mask: Vec<E> = (0..x.numel())
        .map(|_| if r.random::<f64>() < p { E::zero() } else { keep })
        .collect();
    x.mul(&Tensor::from_vec(x.shape(), mask)?)
}

#[derive(Debug, Clone)]
pub struct Dropout {
    p: f64,
    /// mixed into the pass seed so every site draws its own mask
    site: u64,
}

impl Dropout {
    pub fn new(name: &str, p: f64) -> Result<Self> {
        if !(0.0..1.0).contains(&p) {
            return Err(Error::InvalidConfig(format!("dropout probability {p} not in [0, 1)")));
        }
        Ok(Dropout {
            p,
            site: mix_seed(0, name),
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn forward<E: Element>(&self, x: &Tensor<E>, ctx: &ForwardCtx) -> Result<Tensor<E>> {
        dropout(x, self.p, ctx.mode, ctx.seed ^ self.site)
    }
}
