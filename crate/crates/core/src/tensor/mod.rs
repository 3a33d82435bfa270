//! Dense row-major tensors with reverse-mode automatic differentiation.
//!
//! A [`Tensor`] is an immutable, cheaply clonable handle. When any operand of
//! an operation requires a gradient (and recording is enabled on the current
//! thread), the result keeps a link to its operands together with the saved
//! values its backward rule needs. [`Tensor::backward`] orders the reachable
//! graph topologically and replays it in reverse.

mod autograd;
mod broadcast;
mod element;
mod ops;

pub use ops::{sigmoid, trace_relu_signs, EwKind};

use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::{Arc, Mutex};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub use autograd::{is_recording, no_grad, Backward, ComputationRecord};
pub use broadcast::{broadcast_shape, sum_to_shape};
pub use element::Element;

static NEXT_ID: AtomicU64 = AtomicU64::new(1);

/// Initial contents for [`Tensor::new`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Fill {
    Zeros,
    Constant(f64),
    Uniform { lo: f64, hi: f64, seed: u64 },
}

pub(crate) struct Node<E: Element> {
    pub(crate) inputs: Vec<Tensor<E>>,
    pub(crate) op: Box<dyn Backward<E>>,
}

struct Inner<E: Element> {
    id: u64,
    shape: Vec<usize>,
    data: Arc<Vec<E>>,
    requires_grad: bool,
    grad: Mutex<Option<Vec<E>>>,
    node: Option<Node<E>>,
}

pub struct Tensor<E: Element = f32> {
    inner: Arc<Inner<E>>,
}

impl<E: Element> Clone for Tensor<E> {
    fn clone(&self) -> Self {
        Tensor {
            inner: Arc::clone(&self.inner),
        }
    }
}

impl<E: Element> std::fmt::Debug for Tensor<E> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let mut d = f.debug_struct("Tensor");
        d.field("shape", &self.inner.shape);
        d.field("requires_grad", &self.inner.requires_grad);
        if let Some(node) = &self.inner.node {
            d.field("op", &node.op.name());
        }
        if self.numel() <= 16 {
            d.field("data", &self.inner.data);
        }
        d.finish()
    }
}

pub(crate) fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.contains(&0) {
        return Err(Error::InvalidShape {
            shape: shape.to_vec(),
            reason: "extents must be at least 1".into(),
        });
    }
    Ok(())
}

pub(crate) fn numel_of(shape: &[usize]) -> usize {
    shape.iter().product()
}

/// Row-major strides for a contiguous tensor of `shape`.
pub(crate) fn contiguous_strides(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        strides[i] = strides[i + 1] * shape[i + 1];
    }
    strides
}

impl<E: Element> Tensor<E> {
    fn build(shape: Vec<usize>, data: Arc<Vec<E>>, requires_grad: bool, node: Option<Node<E>>) -> Self {
        debug_assert_eq!(numel_of(&shape), data.len());
        Tensor {
            inner: Arc::new(Inner {
                id: NEXT_ID.fetch_add(1, Ordering::Relaxed),
                shape,
                data,
                requires_grad,
                grad: Mutex::new(None),
                node,
            }),
        }
    }

    pub fn new(shape: &[usize], fill: Fill) -> Result<Self> {
        check_shape(shape)?;
        let n = numel_of(shape);
        let data = match fill {
            Fill::Zeros => vec![E::zero(); n],
            Fill::Constant(v) => vec![E::of(v); n],
            Fill::Uniform { lo, hi, seed } => {
                if !(lo < hi) {
                    return Err(Error::InvalidArgument(format!(
                        "uniform fill needs lo < hi, got [{lo}, {hi})"
                    )));
                }
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                (0..n).map(|_| E::of(rng.random_range(lo..hi))).collect()
            }
        };
        Ok(Self::build(shape.to_vec(), Arc::new(data), false, None))
    }

    pub fn zeros(shape: &[usize]) -> Result<Self> {
        Self::new(shape, Fill::Zeros)
    }

    pub fn full(shape: &[usize], value: f64) -> Result<Self> {
        Self::new(shape, Fill::Constant(value))
    }

    pub fn uniform(shape: &[usize], lo: f64, hi: f64, seed: u64) -> Result<Self> {
        Self::new(shape, Fill::Uniform { lo, hi, seed })
    }

    /// Constant tensor from row-major data.
    pub fn from_vec(shape: &[usize], data: Vec<E>) -> Result<Self> {
        check_shape(shape)?;
        if numel_of(shape) != data.len() {
            return Err(Error::InvalidShape {
                shape: shape.to_vec(),
                reason: format!("data has {} elements", data.len()),
            });
        }
        Ok(Self::build(shape.to_vec(), Arc::new(data), false, None))
    }

    pub fn from_f64(shape: &[usize], data: &[f64]) -> Result<Self> {
        Self::from_vec(shape, data.iter().map(|&v| E::of(v)).collect())
    }

    pub fn scalar(value: E) -> Self {
        Self::build(Vec::new(), Arc::new(vec![value]), false, None)
    }

    /// Leaf tensor that accumulates a gradient during [`Tensor::backward`].
    pub fn parameter(shape: &[usize], data: Vec<E>) -> Result<Self> {
        Ok(Self::from_vec(shape, data)?.requires_grad_(true))
    }

    /// Returns a leaf sharing this tensor's storage with the given flag.
    pub fn requires_grad_(self, requires_grad: bool) -> Self {
        Self::build(
            self.inner.shape.clone(),
            Arc::clone(&self.inner.data),
            requires_grad,
            None,
        )
    }

    /// Same storage, cut off from the computation record.
    pub fn detach(&self) -> Self {
        Self::build(self.inner.shape.clone(), Arc::clone(&self.inner.data), false, None)
    }

    /// Result of a differentiable operation. The node is recorded only when
    /// recording is on and some input requires a gradient.
    pub fn from_op(shape: Vec<usize>, data: Vec<E>, inputs: Vec<Tensor<E>>, op: impl Backward<E> + 'static) -> Self {
        let track = is_recording() && inputs.iter().any(|t| t.requires_grad());
        let node = track.then(|| Node {
            inputs,
            op: Box::new(op),
        });
        Self::build(shape, Arc::new(data), track, node)
    }

    pub(crate) fn share_op(
        shape: Vec<usize>,
        data: Arc<Vec<E>>,
        inputs: Vec<Tensor<E>>,
        op: impl Backward<E> + 'static,
    ) -> Self {
        let track = is_recording() && inputs.iter().any(|t| t.requires_grad());
        let node = track.then(|| Node {
            inputs,
            op: Box::new(op),
        });
        Self::build(shape, data, track, node)
    }

    pub fn id(&self) -> u64 {
        self.inner.id
    }

    pub fn shape(&self) -> &[usize] {
        &self.inner.shape
    }

    pub fn rank(&self) -> usize {
        self.inner.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.inner.data.len()
    }

    pub fn data(&self) -> &[E] {
        &self.inner.data
    }

    pub(crate) fn data_arc(&self) -> &Arc<Vec<E>> {
        &self.inner.data
    }

    pub fn to_vec(&self) -> Vec<E> {
        self.inner.data.as_ref().clone()
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.inner.data.iter().map(|v| v.as_f64()).collect()
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> E {
        debug_assert_eq!(self.numel(), 1);
        self.inner.data[0]
    }

    pub fn requires_grad(&self) -> bool {
        self.inner.requires_grad
    }

    pub fn is_leaf(&self) -> bool {
        self.inner.node.is_none()
    }

    pub(crate) fn node(&self) -> Option<&Node<E>> {
        self.inner.node.as_ref()
    }

    /// Accumulated gradient of a leaf, if any was produced.
    pub fn grad(&self) -> Option<Vec<E>> {
        self.inner.grad.lock().expect("grad lock poisoned").clone()
    }

    pub fn zero_grad(&self) {
        *self.inner.grad.lock().expect("grad lock poisoned") = None;
    }

    pub(crate) fn accumulate_grad(&self, g: &[E]) {
        let mut slot = self.inner.grad.lock().expect("grad lock poisoned");
        match slot.as_mut() {
            Some(acc) => acc.iter_mut().zip(g).for_each(|(a, &b)| *a += b),
            None => *slot = Some(g.to_vec()),
        }
    }

    /// Copy into another element type as a constant leaf.
    pub fn cast<F: Element>(&self) -> Tensor<F> {
        let data = self.inner.data.iter().map(|v| F::of(v.as_f64())).collect();
        Tensor::build(self.inner.shape.clone(), Arc::new(data), false, None)
    }
}

/// Deterministic stream of uniform values, shared by initializers and tests.
pub fn uniform_vec(n: usize, lo: f64, hi: f64, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

#[cfg(test)]
mod tests;
