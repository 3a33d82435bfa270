use super::{Layer, Param};
use crate::error::Result;
use crate::tensor::{Element, Tensor};

/// Fully connected layer `x · W + b` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear<E: Element> {
    pub weight: Param<E>,
    pub bias: Param<E>,
}

impl<E: Element> Linear<E> {
    pub fn new(name: &str, inputs: usize, outputs: usize, seed: u64) -> Result<Self> {
        Ok(Linear {
            weight: Param::he_uniform(format!("{name}.weight"), &[inputs, outputs], inputs, seed)?,
            bias: Param::constant(format!("{name}.bias"), &[outputs], 0.0)?,
        })
    }

    pub fn inputs(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn outputs(&self) -> usize {
        self.weight.shape()[1]
    }

    /// `x` is `[rows, in]`.
    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        x.matmul(self.weight.value())?.add(self.bias.value())
    }
}

impl<E: Element> Layer<E> for Linear<E> {
    fn params(&self) -> Vec<&Param<E>> {
        vec![&self.weight, &self.bias]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        vec![&mut self.weight, &mut self.bias]
    }
}
