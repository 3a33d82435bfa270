use std::sync::Mutex;

use super::{Layer, Mode, Param};
use crate::error::{Error, Result};
use crate::tensor::{Backward, Element, Tensor};

pub const BN_MOMENTUM: f64 = 0.1;
pub const BN_EPS: f64 = 1e-5;

#[derive(Debug, Clone)]
struct Running<E> {
    mean: Vec<E>,
    var: Vec<E>,
}

/// Affine parameters plus running statistics of one normalization site.
#[derive(Debug)]
pub struct NormState<E: Element> {
    name: String,
    pub gamma: Param<E>,
    pub beta: Param<E>,
    running: Mutex<Running<E>>,
    pub momentum: f64,
    pub eps: f64,
}

impl<E: Element> Clone for NormState<E> {
    fn clone(&self) -> Self {
        NormState {
            name: self.name.clone(),
            gamma: self.gamma.clone(),
            beta: self.beta.clone(),
            running: Mutex::new(self.running.lock().expect("stats lock").clone()),
            momentum: self.momentum,
            eps: self.eps,
        }
    }
}

impl<E: Element> NormState<E> {
    /// `channels` statistics, gamma = 1, beta = 0, running mean 0 / var 1.
    pub fn new(name: &str, channels: usize) -> Result<Self> {
        Ok(NormState {
            name: name.to_string(),
            gamma: Param::constant(format!("{name}.gamma"), &[channels], 1.0)?,
            beta: Param::constant(format!("{name}.beta"), &[channels], 0.0)?,
            running: Mutex::new(Running {
                mean: vec![E::zero(); channels],
                var: vec![E::one(); channels],
            }),
            momentum: BN_MOMENTUM,
            eps: BN_EPS,
        })
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn channels(&self) -> usize {
        self.gamma.numel()
    }

    pub fn running_mean(&self) -> Vec<E> {
        self.running.lock().expect("stats lock").mean.clone()
    }

    pub fn running_var(&self) -> Vec<E> {
        self.running.lock().expect("stats lock").var.clone()
    }

    pub fn set_running(&self, mean: Vec<E>, var: Vec<E>) -> Result<()> {
        let c = self.channels();
        if mean.len() != c || var.len() != c {
            return Err(Error::ShapeMismatch {
                op: "set_running",
                lhs: vec![mean.len(), var.len()],
                rhs: vec![c],
            });
        }
        if var.iter().any(|&v| v < E::zero()) {
            return Err(Error::InvalidArgument(format!(
                "{}: negative running variance",
                self.name
            )));
        }
        *self.running.lock().expect("stats lock") = Running { mean, var };
        Ok(())
    }

    fn update(&self, batch_mean: &[E], batch_var: &[E]) {
        let m = E::of(self.momentum);
        let keep = E::one() - m;
        let mut r = self.running.lock().expect("stats lock");
        for (rm, &bm) in r.mean.iter_mut().zip(batch_mean) {
            *rm = keep * *rm + m * bm;
        }
        for (rv, &bv) in r.var.iter_mut().zip(batch_var) {
            *rv = keep * *rv + m * bv;
        }
    }
}

struct BatchNormOp<E> {
    xhat: Vec<E>,
    inv_std: Vec<E>,
    n: usize,
    c: usize,
    plane: usize,
    /// batch statistics were used, so the mean/var depend on x
    batch_stats: bool,
}

impl<E: Element> Backward<E> for BatchNormOp<E> {
    fn name(&self) -> &'static str {
        "batch_norm"
    }

    fn backward(&self, inputs: &[Tensor<E>], _out: &[E], grad: &[E]) -> Vec<Option<Vec<E>>> {
        let (n, c, plane) = (self.n, self.c, self.plane);
        let gamma = inputs[1].data();
        let count = E::of((n * plane) as f64);
        let mut dgamma = vec![E::zero(); c];
        let mut dbeta = vec![E::zero(); c];
        for b in 0..n {
            for ch in 0..c {
                let off = (b * c + ch) * plane;
                for i in off..off + plane {
                    dbeta[ch] += grad[i];
                    dgamma[ch] += grad[i] * self.xhat[i];
                }
            }
        }
        let dx = inputs[0].requires_grad().then(|| {
            let mut dx = vec![E::zero(); grad.len()];
            for ch in 0..c {
                let scale = gamma[ch] * self.inv_std[ch];
                let (mean_g, mean_gx) = if self.batch_stats {
                    (dbeta[ch] / count, dgamma[ch] / count)
                } else {
                    (E::zero(), E::zero())
                };
                for b in 0..n {
                    let off = (b * c + ch) * plane;
                    for i in off..off + plane {
                        dx[i] = scale * (grad[i] - mean_g - self.xhat[i] * mean_gx);
                    }
                }
            }
            dx
        });
        vec![dx, Some(dgamma), Some(dbeta)]
    }
}

/// Per-channel normalization over (N, F, T) followed by gamma/beta.
pub fn batchnorm2d<E: Element>(x: &Tensor<E>, state: &NormState<E>, mode: Mode) -> Result<Tensor<E>> {
    let s = x.shape();
    if s.len() != 4 || s[1] != state.channels() {
        return Err(Error::ShapeMismatch {
            op: "batchnorm2d",
            lhs: s.to_vec(),
            rhs: vec![0, state.channels(), 0, 0],
        });
    }
    let (n, c, plane) = (s[0], s[1], s[2] * s[3]);
    let count = n * plane;
    let xd = x.data();
    let eps = E::of(state.eps);

    let (mean, var) = match mode {
        Mode::Train => {
            if count <= 1 {
                return Err(Error::InvalidArgument(format!(
                    "{}: batch statistics need more than one value per channel, got {count}",
                    state.name
                )));
            }
            let inv = E::one() / E::of(count as f64);
            let mut mean = vec![E::zero(); c];
            let mut var = vec![E::zero(); c];
            for ch in 0..c {
                let mut sum = E::zero();
                for b in 0..n {
                    sum += xd[(b * c + ch) * plane..][..plane].iter().copied().sum::<E>();
                }
                let mu = sum * inv;
                let mut sq = E::zero();
                for b in 0..n {
                    for &v in &xd[(b * c + ch) * plane..][..plane] {
                        sq += (v - mu) * (v - mu);
                    }
                }
                mean[ch] = mu;
                var[ch] = sq * inv;
            }
            state.update(&mean, &var);
            (mean, var)
        }
        Mode::Eval => (state.running_mean(), state.running_var()),
    };

    let inv_std: Vec<E> = var.iter().map(|&v| E::one() / (v + eps).sqrt()).collect();
    let gamma = state.gamma.value().data();
    let beta = state.beta.value().data();
    let mut xhat = vec![E::zero(); xd.len()];
    let mut out = vec![E::zero(); xd.len()];
    for b in 0..n {
        for ch in 0..c {
            let off = (b * c + ch) * plane;
            for i in off..off + plane {
                let h = (xd[i] - mean[ch]) * inv_std[ch];
                xhat[i] = h;
                out[i] = gamma[ch] * h + beta[ch];
            }
        }
    }
    Ok(Tensor::from_op(
        s.to_vec(),
        out,
        vec![x.clone(), state.gamma.value().clone(), state.beta.value().clone()],
        BatchNormOp {
            xhat,
            inv_std,
            n,
            c,
            plane,
            batch_stats: mode == Mode::Train,
        },
    ))
}

/// Batch normalization applied independently to `subbands` contiguous
/// frequency groups; `state` holds `channels * subbands` statistics.
pub fn subspectral_norm<E: Element>(
    x: &Tensor<E>,
    state: &NormState<E>,
    subbands: usize,
    mode: Mode,
) -> Result<Tensor<E>> {
    let s = x.shape();
    if s.len() != 4 {
        return Err(Error::ShapeMismatch {
            op: "subspectral_norm",
            lhs: s.to_vec(),
            rhs: vec![0, 0, 0, 0],
        });
    }
    let (n, c, f, t) = (s[0], s[1], s[2], s[3]);
    if subbands == 0 || f % subbands != 0 {
        return Err(Error::InvalidGeometry(format!(
            "frequency extent F={f} is not divisible by S={subbands} subbands"
        )));
    }
    // [N, C, F, T] -> [N, C*S, F/S, T] is a pure relabelling of row-major data
    let grouped = x.reshape(&[n, c * subbands, f / subbands, t])?;
    batchnorm2d(&grouped, state, mode)?.reshape(s)
}

#[derive(Debug, Clone)]
pub struct BatchNorm2d<E: Element> {
    state: NormState<E>,
}

impl<E: Element> BatchNorm2d<E> {
    pub fn new(name: &str, channels: usize) -> Result<Self> {
        Ok(BatchNorm2d {
            state: NormState::new(name, channels)?,
        })
    }

    pub fn state(&self) -> &NormState<E> {
        &self.state
    }

    pub fn forward(&self, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        batchnorm2d(x, &self.state, mode)
    }
}

impl<E: Element> Layer<E> for BatchNorm2d<E> {
    fn params(&self) -> Vec<&Param<E>> {
        vec![&self.state.gamma, &self.state.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        vec![&mut self.state.gamma, &mut self.state.beta]
    }

    fn norm_states(&self) -> Vec<&NormState<E>> {
        vec![&self.state]
    }
}

#[derive(Debug, Clone)]
pub struct SubSpectralNorm<E: Element> {
    state: NormState<E>,
    subbands: usize,
}

impl<E: Element> SubSpectralNorm<E> {
    pub fn new(name: &str, channels: usize, subbands: usize) -> Result<Self> {
        if subbands == 0 {
            return Err(Error::InvalidConfig("subband count must be at least 1".into()));
        }
        Ok(SubSpectralNorm {
            state: NormState::new(name, channels * subbands)?,
            subbands,
        })
    }

    pub fn subbands(&self) -> usize {
        self.subbands
    }

    pub fn state(&self) -> &NormState<E> {
        &self.state
    }

    pub fn forward(&self, x: &Tensor<E>, mode: Mode) -> Result<Tensor<E>> {
        subspectral_norm(x, &self.state, self.subbands, mode)
    }
}

impl<E: Element> Layer<E> for SubSpectralNorm<E> {
    fn params(&self) -> Vec<&Param<E>> {
        vec![&self.state.gamma, &self.state.beta]
    }

    fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        vec![&mut self.state.gamma, &mut self.state.beta]
    }

    fn norm_states(&self) -> Vec<&NormState<E>> {
        vec![&self.state]
    }
}
