//! Trailing-aligned broadcasting with extent-1 expansion.

use super::{contiguous_strides, numel_of, Element};
use crate::error::{Error, Result};

pub fn broadcast_shape(op: &'static str, a: &[usize], b: &[usize]) -> Result<Vec<usize>> {
    let rank = a.len().max(b.len());
    let mut out = vec![0; rank];
    for i in 0..rank {
        let ea = if i + a.len() >= rank { a[i + a.len() - rank] } else { 1 };
        let eb = if i + b.len() >= rank { b[i + b.len() - rank] } else { 1 };
        out[i] = match (ea, eb) {
            (x, y) if x == y => x,
            (1, y) => y,
            (x, 1) => x,
            _ => {
                return Err(Error::ShapeMismatch {
                    op,
                    lhs: a.to_vec(),
                    rhs: b.to_vec(),
                })
            }
        };
    }
    Ok(out)
}

/// Strides that read `shape` as if it had `out_shape`: broadcast axes get 0.
pub(crate) fn expanded_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let rank = out_shape.len();
    let own = contiguous_strides(shape);
    let offset = rank - shape.len();
    (0..rank)
        .map(|i| {
            if i < offset || shape[i - offset] == 1 {
                0
            } else {
                own[i - offset]
            }
        })
        .collect()
}

/// Calls `f(out_index, a_index, b_index)` for every element of `out_shape`
/// in row-major order.
pub(crate) fn for_each_pair(out_shape: &[usize], sa: &[usize], sb: &[usize], mut f: impl FnMut(usize, usize, usize)) {
    let rank = out_shape.len();
    if rank == 0 {
        f(0, 0, 0);
        return;
    }
    let inner = out_shape[rank - 1];
    let (ia, ib) = (sa[rank - 1], sb[rank - 1]);
    let outer = numel_of(&out_shape[..rank - 1]);
    let mut idx = vec![0usize; rank - 1];
    let (mut oa, mut ob) = (0usize, 0usize);
    let mut o = 0;
    for _ in 0..outer {
        let (mut pa, mut pb) = (oa, ob);
        for _ in 0..inner {
            f(o, pa, pb);
            o += 1;
            pa += ia;
            pb += ib;
        }
        // odometer over the outer axes
        for d in (0..rank - 1).rev() {
            idx[d] += 1;
            oa += sa[d];
            ob += sb[d];
            if idx[d] < out_shape[d] {
                break;
            }
            oa -= sa[d] * out_shape[d];
            ob -= sb[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

/// Sums a gradient of shape `from` down to `to` over the broadcast axes.
pub fn sum_to_shape<E: Element>(grad: &[E], from: &[usize], to: &[usize]) -> Vec<E> {
    if from == to {
        return grad.to_vec();
    }
    let st = expanded_strides(to, from);
    let zeros = vec![0; from.len()];
    let mut out = vec![E::zero(); numel_of(to)];
    for_each_pair(from, &st, &zeros, |o, t, _| out[t] += grad[o]);
    out
}
