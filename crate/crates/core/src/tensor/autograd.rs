use std::cell::Cell;
use std::collections::{HashMap, HashSet};

use super::{Element, Tensor};
use crate::error::{Error, Result};

/// Backward rule of a recorded primitive.
///
/// `grad` is the gradient of the loss with respect to the primitive's output
/// and `output` its forward value. The rule returns one entry per input;
/// `None` is allowed for inputs that do not require a gradient.
pub trait Backward<E: Element>: Send + Sync {
    fn name(&self) -> &'static str;

    fn backward(&self, inputs: &[Tensor<E>], output: &[E], grad: &[E]) -> Vec<Option<Vec<E>>>;
}

thread_local! {
    static RECORDING: Cell<bool> = const { Cell::new(true) };
}

pub fn is_recording() -> bool {
    RECORDING.with(|r| r.get())
}

/// Runs `f` with recording disabled on this thread.
pub fn no_grad<T>(f: impl FnOnce() -> T) -> T {
    struct Restore(bool);
    impl Drop for Restore {
        fn drop(&mut self) {
            RECORDING.with(|r| r.set(self.0));
        }
    }
    let _restore = Restore(RECORDING.with(|r| r.replace(false)));
    f()
}

/// The recorded operations reachable from a root, in topological order:
/// every operand of entry `i` is a leaf or appears before `i`.
pub struct ComputationRecord<E: Element> {
    order: Vec<Tensor<E>>,
}

impl<E: Element> ComputationRecord<E> {
    pub fn reachable_from(root: &Tensor<E>) -> Self {
        let mut order = Vec::new();
        let mut visited = HashSet::new();
        // (tensor, children already pushed)
        let mut stack = vec![(root.clone(), false)];
        while let Some((t, expanded)) = stack.pop() {
            if expanded {
                order.push(t);
                continue;
            }
            if !t.requires_grad() || !visited.insert(t.id()) {
                continue;
            }
            stack.push((t.clone(), true));
            if let Some(node) = t.node() {
                for input in node.inputs.iter().rev() {
                    if input.requires_grad() && !visited.contains(&input.id()) {
                        stack.push((input.clone(), false));
                    }
                }
            }
        }
        ComputationRecord { order }
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    /// Names of the recorded primitives in execution order (leaves skipped).
    pub fn op_names(&self) -> Vec<&'static str> {
        self.order
            .iter()
            .filter_map(|t| t.node().map(|n| n.op.name()))
            .collect()
    }

    pub fn tensors(&self) -> &[Tensor<E>] {
        &self.order
    }
}

impl<E: Element> Tensor<E> {
    /// Populates `grad` on every leaf reachable from this scalar that
    /// requires one. Gradients from repeated uses are summed, and repeated
    /// calls accumulate into existing leaf gradients.
    pub fn backward(&self) -> Result<()> {
        if self.numel() != 1 {
            return Err(Error::InvalidArgument(format!(
                "backward needs a scalar loss, got shape {:?}",
                self.shape()
            )));
        }
        if !self.requires_grad() {
            return Err(Error::InvalidArgument(
                "loss was not produced under an active computation record".into(),
            ));
        }
        let record = ComputationRecord::reachable_from(self);
        let mut grads: HashMap<u64, Vec<E>> = HashMap::new();
        grads.insert(self.id(), vec![E::one()]);

        for t in record.order.iter().rev() {
            let Some(g) = grads.remove(&t.id()) else {
                continue;
            };
            match t.node() {
                None => t.accumulate_grad(&g),
                Some(node) => {
                    let input_grads = node.op.backward(&node.inputs, t.data(), &g);
                    debug_assert_eq!(input_grads.len(), node.inputs.len());
                    for (input, ig) in node.inputs.iter().zip(input_grads) {
                        let Some(ig) = ig else { continue };
                        if !input.requires_grad() {
                            continue;
                        }
                        debug_assert_eq!(ig.len(), input.numel(), "{}", node.op.name());
                        match grads.get_mut(&input.id()) {
                            Some(acc) => acc.iter_mut().zip(&ig).for_each(|(a, &b)| *a += b),
                            None => {
                                grads.insert(input.id(), ig);
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }
}
