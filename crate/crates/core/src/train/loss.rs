use crate::error::{Error, Result};
use crate::tensor::{Backward, Element, Tensor};

struct CrossEntropyOp<E> {
    probs: Vec<E>,
    labels: Vec<usize>,
    k: usize,
}

impl<E: Element> Backward<E> for CrossEntropyOp<E> {
    fn name(&self) -> &'static str {
        "cross_entropy"
    }

    fn backward(&self, _inputs: &[Tensor<E>], _out: &[E], grad: &[E]) -> Vec<Option<Vec<E>>> {
        let scale = grad[0] / E::of(self.labels.len() as f64);
        let mut g: Vec<E> = self.probs.iter().map(|&p| p * scale).collect();
        for (row, &l) in self.labels.iter().enumerate() {
            g[row * self.k + l] -= scale;
        }
        vec![Some(g)]
    }
}

/// Row-wise softmax of a `[N, K]` buffer, stabilized by subtracting each row's max.
pub fn softmax_rows<E: Element>(logits: &[E], k: usize) -> Vec<E> {
    let mut out = Vec::with_capacity(logits.len());
    for row in logits.chunks(k) {
        let max = row.iter().copied().fold(E::neg_infinity(), E::max);
        let exps: Vec<E> = row.iter().map(|&v| (v - max).exp()).collect();
        let total: E = exps.iter().copied().sum();
        out.extend(exps.into_iter().map(|e| e / total));
    }
    out
}

/// Index of the largest logit in each row; ties go to the lowest index.
pub fn argmax_rows<E: Element>(logits: &[E], k: usize) -> Vec<usize> {
    logits
        .chunks(k)
        .map(|row| {
            let mut best = 0;
            for (i, &v) in row.iter().enumerate() {
                if v > row[best] {
                    best = i;
                }
            }
            best
        })
        .collect()
}

/// Mean over the batch of `-log softmax(logits)[label]`.
pub fn cross_entropy<E: Element>(logits: &Tensor<E>, labels: &[usize]) -> Result<Tensor<E>> {
    let s = logits.shape();
    if s.len() != 2 || s[0] != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "cross_entropy",
            lhs: s.to_vec(),
            rhs: vec![labels.len(), 0],
        });
    }
    let k = s[1];
    if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
        return Err(Error::InvalidLabel { label: bad, classes: k });
    }
    let data = logits.data();
    let mut total = 0.0;
    for (row, &l) in data.chunks(k).zip(labels) {
        let max = row.iter().copied().fold(E::neg_infinity(), E::max).as_f64();
        let lse = max + row.iter().map(|v| (v.as_f64() - max).exp()).sum::<f64>().ln();
        total += lse - row[l].as_f64();
    }
    let loss = E::of(total / labels.len() as f64);
    Ok(Tensor::from_op(
        Vec::new(),
        vec![loss],
        vec![logits.clone()],
        CrossEntropyOp {
            probs: softmax_rows(data, k),
            labels: labels.to_vec(),
            k,
        },
    ))
}
