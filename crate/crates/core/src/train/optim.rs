use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};
use crate::model::{NamedTensor, OptimState};
use crate::nn::Param;
use crate::tensor::Element;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OptimKind {
    SgdMomentum,
    Adam,
}

impl fmt::Display for OptimKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            OptimKind::SgdMomentum => "sgd_momentum",
            OptimKind::Adam => "adam",
        })
    }
}

impl FromStr for OptimKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "sgd_momentum" | "sgd" => Ok(OptimKind::SgdMomentum),
            "adam" => Ok(OptimKind::Adam),
            _ => Err(Error::InvalidConfig(format!(
                "optimizer must be sgd_momentum or adam, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub lr_peak: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub epochs: usize,
    pub warmup_epochs: usize,
    /// cosine decay to zero after warmup; otherwise the rate stays at `lr_peak`
    pub cosine: bool,
    pub batch_size: usize,
}

impl OptimConfig {
    /// SGD with momentum, 200 epochs, batch 100, linear warmup to 0.1 over 5 epochs, then cosine.
    pub fn sgd200() -> Self {
        OptimConfig {
            kind: OptimKind::SgdMomentum,
            lr_peak: 0.1,
            momentum: 0.9,
            weight_decay: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            epochs: 200,
            warmup_epochs: 5,
            cosine: true,
            batch_size: 100,
        }
    }

    /// Adam, 50 epochs, batch 64, constant rate 1e-3.
    pub fn adam50() -> Self {
        OptimConfig {
            kind: OptimKind::Adam,
            lr_peak: 1e-3,
            epochs: 50,
            warmup_epochs: 0,
            cosine: false,
            batch_size: 64,
            ..Self::sgd200()
        }
    }

    pub fn recipe(name: &str) -> Result<Self> {
        match name {
            "sgd200" => Ok(Self::sgd200()),
            "adam50" => Ok(Self::adam50()),
            _ => Err(Error::InvalidConfig(format!(
                "recipe must be sgd200 or adam50, got {name:?}"
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr_peak > 0.0 && self.lr_peak.is_finite()) {
            return Err(Error::InvalidConfig(format!(
                "lr_peak must be positive, got {}",
                self.lr_peak
            )));
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::InvalidConfig(format!(
                "momentum {} not in [0, 1)",
                self.momentum
            )));
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::InvalidConfig("adam betas must lie in [0, 1)".into()));
        }
        if self.weight_decay < 0.0 || self.eps <= 0.0 {
            return Err(Error::InvalidConfig("weight_decay must be >= 0 and eps > 0".into()));
        }
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidConfig("epochs and batch_size must be positive".into()));
        }
        if self.warmup_epochs > self.epochs {
            return Err(Error::InvalidConfig(format!(
                "warmup_epochs {} exceeds epochs {}",
                self.warmup_epochs, self.epochs
            )));
        }
        Ok(())
    }

    /// Applies one `key=value` setting. Returns `false` for keys that are not optimizer keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        fn p<T: FromStr>(key: &str, v: &str) -> Result<T> {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {v:?}")))
        }
        match key {
            "optimizer" => self.kind = value.trim().parse()?,
            "lr" | "lr_peak" => self.lr_peak = p(key, value)?,
            "momentum" => self.momentum = p(key, value)?,
            "weight_decay" => self.weight_decay = p(key, value)?,
            "beta1" => self.beta1 = p(key, value)?,
            "beta2" => self.beta2 = p(key, value)?,
            "adam_eps" => self.eps = p(key, value)?,
            "epochs" => self.epochs = p(key, value)?,
            "warmup_epochs" => self.warmup_epochs = p(key, value)?,
            "cosine" => self.cosine = p(key, value)?,
            "batch_size" => self.batch_size = p(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("optimizer", self.kind.to_string()),
            ("lr_peak", self.lr_peak.to_string()),
            ("momentum", self.momentum.to_string()),
            ("weight_decay", self.weight_decay.to_string()),
            ("beta1", self.beta1.to_string()),
            ("beta2", self.beta2.to_string()),
            ("adam_eps", self.eps.to_string()),
            ("epochs", self.epochs.to_string()),
            ("warmup_epochs", self.warmup_epochs.to_string()),
            ("cosine", self.cosine.to_string()),
            ("batch_size", self.batch_size.to_string()),
        ]
    }
}

/// Learning rate at a global step: linear warmup from zero, then cosine decay to zero.
pub fn lr_at(step: usize, steps_per_epoch: usize, cfg: &OptimConfig) -> f64 {
    let w = cfg.warmup_epochs * steps_per_epoch;
    let s = cfg.epochs * steps_per_epoch;
    if step < w {
        return cfg.lr_peak * step as f64 / w as f64;
    }
    if !cfg.cosine {
        return cfg.lr_peak;
    }
    if step >= s {
        return 0.0;
    }
    let phase = std::f64::consts::PI * (step - w) as f64 / (s - w) as f64;
    cfg.lr_peak * 0.5 * (1.0 + phase.cos())
}

fn check_state<E: Element>(params: &[&mut Param<E>], grads: &[Vec<E>], bufs: &[&[Vec<E>]]) -> Result<()> {
    if grads.len() != params.len() || bufs.iter().any(|b| b.len() != params.len()) {
        return Err(Error::StateCorruption(format!(
            "{} parameters, {} gradients, buffer counts {:?}",
            params.len(),
            grads.len(),
            bufs.iter().map(|b| b.len()).collect::<Vec<_>>()
        )));
    }
    for (i, p) in params.iter().enumerate() {
        let n = p.numel();
        if grads[i].len() != n || bufs.iter().any(|b| b[i].len() != n) {
            return Err(Error::StateCorruption(format!(
                "{}: buffer length differs from {n}",
                p.name()
            )));
        }
    }
    Ok(())
}

fn decayed<E: Element>(p: &Param<E>, g: &[E], wd: f64) -> Vec<E> {
    let wd = if p.decays() { E::of(wd) } else { E::zero() };
    g.iter().zip(p.value().data()).map(|(&g, &w)| g + wd * w).collect()
}

/// `v = momentum * v + (g + wd * w)`, `w -= lr * v`.
pub fn sgd_step<E: Element>(
    params: &mut [&mut Param<E>],
    grads: &[Vec<E>],
    velocity: &mut [Vec<E>],
    lr: f64,
    cfg: &OptimConfig,
) -> Result<()> {
    check_state(params, grads, &[velocity])?;
    let (mu, lr) = (E::of(cfg.momentum), E::of(lr));
    for ((p, g), v) in params.iter_mut().zip(grads).zip(velocity.iter_mut()) {
        let g = decayed(p, g, cfg.weight_decay);
        for (vi, gi) in v.iter_mut().zip(&g) {
            *vi = mu * *vi + *gi;
        }
        let w = p
            .value()
            .data()
            .iter()
            .zip(v.iter())
            .map(|(&w, &vi)| w - lr * vi)
            .collect();
        p.set(w)?;
    }
    Ok(())
}

/// Bias-corrected Adam step `t` (1-based) with weight decay added to the gradient.
pub fn adam_step<E: Element>(
    params: &mut [&mut Param<E>],
    grads: &[Vec<E>],
    m: &mut [Vec<E>],
    v: &mut [Vec<E>],
    t: u64,
    lr: f64,
    cfg: &OptimConfig,
) -> Result<()> {
    check_state(params, grads, &[m, v])?;
    if t == 0 {
        return Err(Error::StateCorruption("adam step counter starts at 1".into()));
    }
    let (b1, b2) = (cfg.beta1, cfg.beta2);
    let c1 = 1.0 - b1.powi(t as i32);
    let c2 = 1.0 - b2.powi(t as i32);
    for (i, p) in params.iter_mut().enumerate() {
        let g = decayed(p, &grads[i], cfg.weight_decay);
        let w: Vec<E> = p
            .value()
            .data()
            .iter()
            .zip(&g)
            .zip(m[i].iter_mut().zip(v[i].iter_mut()))
            .map(|((&w, &g), (mi, vi))| {
                *mi = E::of(b1) * *mi + E::of(1.0 - b1) * g;
                *vi = E::of(b2) * *vi + E::of(1.0 - b2) * g * g;
                let mhat = mi.as_f64() / c1;
                let vhat = vi.as_f64() / c2;
                E::of(w.as_f64() - lr * mhat / (vhat.sqrt() + cfg.eps))
            })
            .collect();
        p.set(w)?;
    }
    Ok(())
}

/// Optimizer buffers tied to a fixed, ordered parameter list.
#[derive(Debug, Clone)]
pub struct Optimizer<E: Element> {
    cfg: OptimConfig,
    names: Vec<String>,
    /// velocity (SGD) or first moment (Adam)
    first: Vec<Vec<E>>,
    /// second moment (Adam only)
    second: Vec<Vec<E>>,
    step: u64,
}

impl<E: Element> Optimizer<E> {
    pub fn new(cfg: &OptimConfig) -> Self {
        Optimizer {
            cfg: cfg.clone(),
            names: Vec::new(),
            first: Vec::new(),
            second: Vec::new(),
            step: 0,
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn config(&self) -> &OptimConfig {
        &self.cfg
    }

    fn ensure(&mut self, params: &[&mut Param<E>]) -> Result<()> {
        if self.names.is_empty() && self.step == 0 {
            self.names = params.iter().map(|p| p.name().to_string()).collect();
            self.first = params.iter().map(|p| vec![E::zero(); p.numel()]).collect();
            if self.cfg.kind == OptimKind::Adam {
                self.second = self.first.clone();
            }
        }
        if self.names.len() != params.len() || self.names.iter().zip(params).any(|(n, p)| n != p.name()) {
            return Err(Error::StateCorruption("parameter list changed between steps".into()));
        }
        Ok(())
    }

    /// One update from the gradients stored on the parameters (missing gradients count as zero).
    pub fn step(&mut self, params: &mut [&mut Param<E>], lr: f64) -> Result<()> {
        self.ensure(params)?;
        let grads: Vec<Vec<E>> = params
            .iter()
            .map(|p| p.grad().unwrap_or_else(|| vec![E::zero(); p.numel()]))
            .collect();
        self.step += 1;
        match self.cfg.kind {
            OptimKind::SgdMomentum => sgd_step(params, &grads, &mut self.first, lr, &self.cfg),
            OptimKind::Adam => adam_step(
                params,
                &grads,
                &mut self.first,
                &mut self.second,
                self.step,
                lr,
                &self.cfg,
            ),
        }
    }

    pub fn export(&self) -> OptimState {
        let to_f32 = |v: &[E]| v.iter().map(|x| x.as_f64() as f32).collect();
        let mut tensors = Vec::new();
        for (slot, bufs) in [("first", &self.first), ("second", &self.second)] {
            for (n, b) in self.names.iter().zip(bufs.iter()) {
                tensors.push(NamedTensor {
                    name: format!("{slot}.{n}"),
                    shape: vec![b.len()],
                    data: to_f32(b),
                });
            }
        }
        OptimState {
            kind: self.cfg.kind.to_string(),
            step: self.step,
            tensors,
        }
    }

    pub fn import(cfg: &OptimConfig, state: &OptimState) -> Result<Self> {
        if state.kind != cfg.kind.to_string() {
            return Err(Error::StateCorruption(format!(
                "stored optimizer is {}, expected {}",
                state.kind, cfg.kind
            )));
        }
        let mut opt = Self::new(cfg);
        opt.step = state.step;
        for t in &state.tensors {
            let data = t.data.iter().map(|&v| E::of(v as f64)).collect();
            match t.name.split_once('.') {
                Some(("first", n)) => {
                    opt.names.push(n.to_string());
                    opt.first.push(data);
                }
                Some(("second", _)) => opt.second.push(data),
                _ => {
                    return Err(Error::StateCorruption(format!(
                        "unexpected optimizer tensor {}",
                        t.name
                    )))
                }
            }
        }
        let expect_second = if cfg.kind == OptimKind::Adam {
            opt.first.len()
        } else {
            0
        };
        if opt.second.len() != expect_second {
            return Err(Error::StateCorruption("moment buffers are incomplete".into()));
        }
        Ok(opt)
    }
}
