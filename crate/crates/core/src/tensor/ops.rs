use std::cell::RefCell;
use std::sync::Arc;

use super::broadcast::{broadcast_shape, expanded_strides, for_each_pair, sum_to_shape};
use super::{contiguous_strides, numel_of, Backward, Element, Tensor};
use crate::error::{Error, Result};

/// Elementwise operation kinds.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EwKind {
    Add,
    Sub,
    Mul,
    Relu,
    Sigmoid,
}

#[derive(Clone, Copy)]
enum BinKind {
    Add,
    Sub,
    Mul,
}

struct BinaryOp {
    kind: BinKind,
    out_shape: Vec<usize>,
}

impl<E: Element> Backward<E> for BinaryOp {
    fn name(&self) -> &'static str {
        match self.kind {
            BinKind::Add => "add",
            BinKind::Sub => "sub",
            BinKind::Mul => "mul",
        }
    }

    fn backward(&self, inputs: &[Tensor<E>], _out: &[E], grad: &[E]) -> Vec<Option<Vec<E>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let out = &self.out_shape;
        match self.kind {
            BinKind::Add | BinKind::Sub => {
                let ga = a.requires_grad().then(|| sum_to_shape(grad, out, a.shape()));
                let gb = b.requires_grad().then(|| {
                    let mut g = sum_to_shape(grad, out, b.shape());
                    if matches!(self.kind, BinKind::Sub) {
                        g.iter_mut().for_each(|v| *v = -*v);
                    }
                    g
                });
                vec![ga, gb]
            }
            BinKind::Mul => {
                let sa = expanded_strides(a.shape(), out);
                let sb = expanded_strides(b.shape(), out);
                let (ad, bd) = (a.data(), b.data());
                let ga = a.requires_grad().then(|| {
                    let mut full = vec![E::zero(); grad.len()];
                    for_each_pair(out, &sa, &sb, |o, _, ib| full[o] = grad[o] * bd[ib]);
                    sum_to_shape(&full, out, a.shape())
                });
                let gb = b.requires_grad().then(|| {
                    let mut full = vec![E::zero(); grad.len()];
                    for_each_pair(out, &sa, &sb, |o, ia, _| full[o] = grad[o] * ad[ia]);
                    sum_to_shape(&full, out, b.shape())
                });
                vec![ga, gb]
            }
        }
    }
}

fn binary<E: Element>(kind: BinKind, a: &Tensor<E>, b: &Tensor<E>) -> Result<Tensor<E>> {
    let name = <BinaryOp as Backward<E>>::name(&BinaryOp {
        kind,
        out_shape: Vec::new(),
    });
    let out_shape = broadcast_shape(name, a.shape(), b.shape())?;
    let f = |x: E, y: E| match kind {
        BinKind::Add => x + y,
        BinKind::Sub => x - y,
        BinKind::Mul => x * y,
    };
    let data = if a.shape() == b.shape() {
        a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
    } else {
        let sa = expanded_strides(a.shape(), &out_shape);
        let sb = expanded_strides(b.shape(), &out_shape);
        let (ad, bd) = (a.data(), b.data());
        let mut out = vec![E::zero(); numel_of(&out_shape)];
        for_each_pair(&out_shape, &sa, &sb, |o, ia, ib| out[o] = f(ad[ia], bd[ib]));
        out
    };
    Ok(Tensor::from_op(
        out_shape.clone(),
        data,
        vec![a.clone(), b.clone()],
        BinaryOp { kind, out_shape },
    ))
}

#[derive(Clone, Copy)]
enum UnaryKind {
    Relu,
    Sigmoid,
    Scale(f64),
}

struct UnaryOp(UnaryKind);

impl<E: Element> Backward<E> for UnaryOp {
    fn name(&self) -> &'static str {
        match self.0 {
            UnaryKind::Relu => "relu",
            UnaryKind::Sigmoid => "sigmoid",
            UnaryKind::Scale(_) => "scale",
        }
    }

    fn backward(&self, inputs: &[Tensor<E>], out: &[E], grad: &[E]) -> Vec<Option<Vec<E>>> {
        let x = inputs[0].data();
        let g = match self.0 {
            UnaryKind::Relu => grad
                .iter()
                .zip(x)
                .map(|(&g, &x)| if x > E::zero() { g } else { E::zero() })
                .collect(),
            UnaryKind::Sigmoid => grad.iter().zip(out).map(|(&g, &y)| g * y * (E::one() - y)).collect(),
            UnaryKind::Scale(c) => {
                let c = E::of(c);
                grad.iter().map(|&g| g * c).collect()
            }
        };
        vec![Some(g)]
    }
}

thread_local! {
    static RELU_SIGNS: RefCell<Option<Vec<bool>>> = const { RefCell::new(None) };
}

/// Runs `f` and returns, in call order, whether each relu input element was positive.
///
/// Two runs with equal sign traces evaluated the same linear piece of every relu.
pub fn trace_relu_signs<T>(f: impl FnOnce() -> T) -> (T, Vec<bool>) {
    let outer = RELU_SIGNS.with(|s| s.borrow_mut().replace(Vec::new()));
    let out = f();
    let signs = RELU_SIGNS
        .with(|s| std::mem::replace(&mut *s.borrow_mut(), outer))
        .unwrap_or_default();
    (out, signs)
}

fn unary<E: Element>(kind: UnaryKind, x: &Tensor<E>) -> Tensor<E> {
    if matches!(kind, UnaryKind::Relu) {
        RELU_SIGNS.with(|s| {
            if let Some(trace) = s.borrow_mut().as_mut() {
                trace.extend(x.data().iter().map(|&v| v > E::zero()));
            }
        });
    }
    let data = match kind {
        UnaryKind::Relu => x.data().iter().map(|&v| v.max(E::zero())).collect(),
        UnaryKind::Sigmoid => x.data().iter().map(|&v| sigmoid(v)).collect(),
        UnaryKind::Scale(c) => {
            let c = E::of(c);
            x.data().iter().map(|&v| v * c).collect()
        }
    };
    Tensor::from_op(x.shape().to_vec(), data, vec![x.clone()], UnaryOp(kind))
}

/// Logistic function, evaluated without overflow for large |v|.
#[inline]
pub fn sigmoid<E: Element>(v: E) -> E {
    if v >= E::zero() {
        E::one() / (E::one() + (-v).exp())
    } else {
        let e = v.exp();
        e / (E::one() + e)
    }
}

struct MeanOp {
    in_shape: Vec<usize>,
    keep_shape: Vec<usize>,
    count: usize,
}

impl<E: Element> Backward<E> for MeanOp {
    fn name(&self) -> &'static str {
        "reduce_mean"
    }

    fn backward(&self, _inputs: &[Tensor<E>], _out: &[E], grad: &[E]) -> Vec<Option<Vec<E>>> {
        let scale = E::one() / E::of(self.count as f64);
        let so = expanded_strides(&self.keep_shape, &self.in_shape);
        let zeros = vec![0; self.in_shape.len()];
        let mut g = vec![E::zero(); numel_of(&self.in_shape)];
        for_each_pair(&self.in_shape, &so, &zeros, |i, o, _| g[i] = grad[o] * scale);
        vec![Some(g)]
    }
}

struct MatmulOp {
    m: usize,
    k: usize,
    n: usize,
}

impl<E: Element> Backward<E> for MatmulOp {
    fn name(&self) -> &'static str {
        "matmul"
    }

    fn backward(&self, inputs: &[Tensor<E>], _out: &[E], grad: &[E]) -> Vec<Option<Vec<E>>> {
        let (a, b) = (&inputs[0], &inputs[1]);
        let (m, k, n) = (self.m, self.k, self.n);
        // dA = dY · Bᵀ
        let ga = a.requires_grad().then(|| {
            let bd = b.data();
            let mut ga = vec![E::zero(); m * k];
            for i in 0..m {
                let gy = &grad[i * n..(i + 1) * n];
                for p in 0..k {
                    let brow = &bd[p * n..(p + 1) * n];
                    ga[i * k + p] = gy.iter().zip(brow).map(|(&x, &y)| x * y).sum();
                }
            }
            ga
        });
        // dB = Aᵀ · dY
        let gb = b.requires_grad().then(|| {
            let ad = a.data();
            let mut gb = vec![E::zero(); k * n];
            for i in 0..m {
                let gy = &grad[i * n..(i + 1) * n];
                for p in 0..k {
                    let av = ad[i * k + p];
                    let row = &mut gb[p * n..(p + 1) * n];
                    row.iter_mut().zip(gy).for_each(|(r, &g)| *r += av * g);
                }
            }
            gb
        });
        vec![ga, gb]
    }
}

struct ReshapeOp;

impl<E: Element> Backward<E> for ReshapeOp {
    fn name(&self) -> &'static str {
        "reshape"
    }

    fn backward(&self, _inputs: &[Tensor<E>], _out: &[E], grad: &[E]) -> Vec<Option<Vec<E>>> {
        vec![Some(grad.to_vec())]
    }
}

struct PermuteOp {
    axes: Vec<usize>,
    out_shape: Vec<usize>,
}

fn permute_data<E: Element>(data: &[E], shape: &[usize], axes: &[usize]) -> (Vec<usize>, Vec<E>) {
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = contiguous_strides(shape);
    let read: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let zeros = vec![0; shape.len()];
    let mut out = vec![E::zero(); data.len()];
    for_each_pair(&out_shape, &read, &zeros, |o, i, _| out[o] = data[i]);
    (out_shape, out)
}

impl<E: Element> Backward<E> for PermuteOp {
    fn name(&self) -> &'static str {
        "permute"
    }

    fn backward(&self, _inputs: &[Tensor<E>], _out: &[E], grad: &[E]) -> Vec<Option<Vec<E>>> {
        let mut inverse = vec![0; self.axes.len()];
        for (i, &a) in self.axes.iter().enumerate() {
            inverse[a] = i;
        }
        let (_, g) = permute_data(grad, &self.out_shape, &inverse);
        vec![Some(g)]
    }
}

impl<E: Element> Tensor<E> {
    pub fn ew(kind: EwKind, a: &Tensor<E>, b: Option<&Tensor<E>>) -> Result<Tensor<E>> {
        let need_b = || b.ok_or_else(|| Error::InvalidArgument(format!("{kind:?} needs two operands")));
        match kind {
            EwKind::Add => a.add(need_b()?),
            EwKind::Sub => a.sub(need_b()?),
            EwKind::Mul => a.mul(need_b()?),
            EwKind::Relu => Ok(a.relu()),
            EwKind::Sigmoid => Ok(a.sigmoid()),
        }
    }

    pub fn add(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        binary(BinKind::Add, self, other)
    }

    pub fn sub(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        binary(BinKind::Sub, self, other)
    }

    pub fn mul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        binary(BinKind::Mul, self, other)
    }

    pub fn relu(&self) -> Tensor<E> {
        unary(UnaryKind::Relu, self)
    }

    pub fn sigmoid(&self) -> Tensor<E> {
        unary(UnaryKind::Sigmoid, self)
    }

    pub fn scale(&self, c: f64) -> Tensor<E> {
        unary(UnaryKind::Scale(c), self)
    }

    /// Arithmetic mean over `axes`.
    pub fn mean(&self, axes: &[usize], keep_dims: bool) -> Result<Tensor<E>> {
        let rank = self.rank();
        for &axis in axes {
            if axis >= rank {
                return Err(Error::InvalidAxis { axis, rank });
            }
        }
        let in_shape = self.shape().to_vec();
        let keep_shape: Vec<usize> = in_shape
            .iter()
            .enumerate()
            .map(|(i, &e)| if axes.contains(&i) { 1 } else { e })
            .collect();
        let count = numel_of(&in_shape) / numel_of(&keep_shape);
        let so = expanded_strides(&keep_shape, &in_shape);
        let zeros = vec![0; rank];
        let mut sums = vec![E::zero(); numel_of(&keep_shape)];
        let d = self.data();
        for_each_pair(&in_shape, &so, &zeros, |i, o, _| sums[o] += d[i]);
        let inv = E::one() / E::of(count as f64);
        sums.iter_mut().for_each(|s| *s *= inv);
        let out_shape = if keep_dims {
            keep_shape.clone()
        } else {
            in_shape
                .iter()
                .enumerate()
                .filter(|(i, _)| !axes.contains(i))
                .map(|(_, &e)| e)
                .collect()
        };
        Ok(Tensor::from_op(
            out_shape,
            sums,
            vec![self.clone()],
            MeanOp {
                in_shape,
                keep_shape,
                count,
            },
        ))
    }

    /// Sum of all elements as a rank-0 tensor.
    pub fn sum(&self) -> Tensor<E> {
        let all: Vec<usize> = (0..self.rank()).collect();
        let n = self.numel() as f64;
        self.mean(&all, false).expect("all axes are in range").scale(n)
    }

    pub fn matmul(&self, other: &Tensor<E>) -> Result<Tensor<E>> {
        let (a, b) = (self.shape(), other.shape());
        if a.len() != 2 || b.len() != 2 || a[1] != b[0] {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: a.to_vec(),
                rhs: b.to_vec(),
            });
        }
        let (m, k, n) = (a[0], a[1], b[1]);
        let (ad, bd) = (self.data(), other.data());
        let mut out = vec![E::zero(); m * n];
        for i in 0..m {
            let row = &mut out[i * n..(i + 1) * n];
            for p in 0..k {
                let av = ad[i * k + p];
                let brow = &bd[p * n..(p + 1) * n];
                row.iter_mut().zip(brow).for_each(|(r, &bv)| *r += av * bv);
            }
        }
        Ok(Tensor::from_op(
            vec![m, n],
            out,
            vec![self.clone(), other.clone()],
            MatmulOp { m, k, n },
        ))
    }

    /// Same data viewed with a new shape of equal size.
    pub fn reshape(&self, shape: &[usize]) -> Result<Tensor<E>> {
        super::check_shape(shape)?;
        if numel_of(shape) != self.numel() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape().to_vec(),
                rhs: shape.to_vec(),
            });
        }
        Ok(Tensor::share_op(
            shape.to_vec(),
            Arc::clone(self.data_arc()),
            vec![self.clone()],
            ReshapeOp,
        ))
    }

    /// Reorders axes: output axis `i` is input axis `axes[i]`.
    pub fn permute(&self, axes: &[usize]) -> Result<Tensor<E>> {
        let rank = self.rank();
        let mut seen = vec![false; rank];
        if axes.len() != rank {
            return Err(Error::InvalidArgument(format!(
                "permutation {axes:?} does not match rank {rank}"
            )));
        }
        for &a in axes {
            if a >= rank {
                return Err(Error::InvalidAxis { axis: a, rank });
            }
            if std::mem::replace(&mut seen[a], true) {
                return Err(Error::InvalidArgument(format!(
                    "axis {a} repeated in permutation {axes:?}"
                )));
            }
        }
        let (out_shape, data) = permute_data(self.data(), self.shape(), axes);
        Ok(Tensor::from_op(
            out_shape.clone(),
            data,
            vec![self.clone()],
            PermuteOp {
                axes: axes.to_vec(),
                out_shape,
            },
        ))
    }
}
