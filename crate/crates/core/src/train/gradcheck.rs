//! Finite-difference verification of analytic gradients.

use rand::Rng;

use crate::error::{Error, Result};
use crate::model::{build_model, AttentionMode, ModelConfig};
use crate::nn::{
    BatchNorm2d, BcResBlock, BlockKind, BlockSpec, Conv2d, ConvSpec, Dropout, ForwardCtx, Layer, Linear, Mode, Param,
    SqueezeExcite, SubSpectralNorm, TfwSqueezeExcite,
};
use crate::tensor::{no_grad, trace_relu_signs, uniform_vec, Tensor};

#[derive(Debug, Clone, Copy)]
pub struct GradCheckOptions {
    pub eps: f64,
    /// share of parameter elements checked; every tensor gets at least one
    pub param_fraction: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            eps: 1e-4,
            param_fraction: 0.05,
            seed: 7,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// element with the largest error, e.g. `input[12]` or `stem.conv.weight[3]`
    pub location: String,
    pub checked: usize,
    /// elements where every tried step crossed a relu kink, so no finite difference applies
    pub skipped: usize,
}

/// `|a - n| / max(|a|, |n|, 1e-6)`.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Central difference of `eval` at zero. When the two sides land on different
/// relu pieces the step is cut tenfold, twice; `None` if it never stops crossing.
pub(crate) fn central_difference(
    eps: f64,
    mut eval: impl FnMut(f64) -> Result<(f64, Vec<bool>)>,
) -> Result<Option<f64>> {
    for h in [eps, eps / 10.0, eps / 100.0] {
        let (up, up_signs) = eval(h)?;
        let (down, down_signs) = eval(-h)?;
        if up_signs == down_signs {
            return Ok(Some((up - down) / (2.0 * h)));
        }
    }
    Ok(None)
}

/// Compares analytic and central-difference gradients of `sum(probe * forward(x))`,
/// where `probe` is a fixed random tensor, for every input element and a sample
/// of parameter elements.
pub fn grad_check<L: Layer<f64>>(
    layer: &mut L,
    input_shape: &[usize],
    opts: &GradCheckOptions,
    forward: impl Fn(&L, &Tensor<f64>) -> Result<Tensor<f64>>,
) -> Result<GradCheckReport> {
    let n: usize = input_shape.iter().product();
    let x0 = uniform_vec(n, -1.0, 1.0, opts.seed);
    let x = Tensor::parameter(input_shape, x0.clone())?;
    for p in layer.params() {
        p.value().zero_grad();
    }
    let out = forward(layer, &x)?;
    let probe = uniform_vec(out.numel(), -1.0, 1.0, opts.seed ^ 0x9e37);
    out.mul(&Tensor::from_f64(out.shape(), &probe)?)?.sum().backward()?;

    let objective = |layer: &L, xv: &[f64]| -> Result<(f64, Vec<bool>)> {
        let (y, signs) = trace_relu_signs(|| no_grad(|| forward(layer, &Tensor::from_f64(input_shape, xv)?)));
        Ok((y?.data().iter().zip(&probe).map(|(a, b)| a * b).sum(), signs))
    };
    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        location: String::new(),
        checked: 0,
        skipped: 0,
    };
    let mut record = |analytic: f64, numeric: Option<f64>, loc: String| {
        let Some(numeric) = numeric else {
            report.skipped += 1;
            return;
        };
        let err = relative_error(analytic, numeric);
        report.checked += 1;
        if err > report.max_rel_err || report.location.is_empty() {
            report.max_rel_err = err;
            report.location = loc;
        }
    };

    let gx = x.grad().unwrap_or_else(|| vec![0.0; n]);
    let mut xv = x0.clone();
    for i in 0..n {
        let numeric = central_difference(opts.eps, |h| {
            xv[i] = x0[i] + h;
            let r = objective(layer, &xv);
            xv[i] = x0[i];
            r
        })?;
        record(gx[i], numeric, format!("input[{i}]"));
    }

    let mut rng = crate::nn::rng(opts.seed ^ 0x51);
    let count = layer.params().len();
    for k in 0..count {
        let (analytic, init, name) = {
            let p: &Param<f64> = layer.params()[k];
            (p.grad(), p.value().to_vec(), p.name().to_string())
        };
        let analytic = analytic.unwrap_or_else(|| vec![0.0; init.len()]);
        let mut picks: Vec<usize> = (0..init.len())
            .filter(|_| rng.random::<f64>() < opts.param_fraction)
            .collect();
        if picks.is_empty() {
            picks.push(rng.random_range(0..init.len()));
        }
        for i in picks {
            let numeric = central_difference(opts.eps, |h| {
                let mut v = init.clone();
                v[i] += h;
                layer.params_mut()[k].set(v)?;
                objective(layer, &x0)
            })?;
            record(analytic[i], numeric, format!("{name}[{i}]"));
        }
        layer.params_mut()[k].set(init)?;
    }
    Ok(report)
}

/// Components accepted by [`check_component`].
pub const COMPONENTS: &[&str] = &[
    "linear",
    "conv",
    "depthwise_conv",
    "batchnorm",
    "subspectral_norm",
    "se",
    "tfwse",
    "dropout",
    "block_normal",
    "block_transition",
    "model",
];

fn nudge<L: Layer<f64>>(layer: &mut L, seed: u64) -> Result<()> {
    // move gamma/beta/bias off their trivial initial values
    for (j, p) in layer.params_mut().into_iter().enumerate() {
        if !p.decays() {
            let v = uniform_vec(p.numel(), 0.5, 1.5, seed + j as u64);
            p.set(v)?;
        }
    }
    Ok(())
}

/// Runs the harness on one named layer (or the full width-1 model) in 64-bit.
pub fn check_component(name: &str, opts: &GradCheckOptions) -> Result<GradCheckReport> {
    let seed = opts.seed;
    let ctx = ForwardCtx::train(seed);
    match name {
        "linear" => {
            let mut l = Linear::<f64>::new("linear", 6, 4, seed)?;
            nudge(&mut l, seed)?;
            grad_check(&mut l, &[5, 6], opts, |l, x| l.forward(x))
        }
        "conv" => {
            let spec = ConvSpec::new(4, 6, [3, 3])
                .stride([2, 1])
                .dilation([1, 2])
                .padding([1, 2]);
            let mut l = Conv2d::<f64>::new("conv", spec, true, seed)?;
            nudge(&mut l, seed)?;
            grad_check(&mut l, &[2, 4, 7, 8], opts, |l, x| l.forward(x))
        }
        "depthwise_conv" => {
            let spec = ConvSpec::depthwise(4, [3, 1]).padding([1, 0]);
            let mut l = Conv2d::<f64>::new("dw", spec, false, seed)?;
            grad_check(&mut l, &[2, 4, 6, 5], opts, |l, x| l.forward(x))
        }
        "batchnorm" => {
            let mut l = BatchNorm2d::<f64>::new("bn", 4)?;
            nudge(&mut l, seed)?;
            grad_check(&mut l, &[3, 4, 5, 3], opts, |l, x| l.forward(x, Mode::Train))
        }
        "subspectral_norm" => {
            let mut l = SubSpectralNorm::<f64>::new("ssn", 3, 5)?;
            nudge(&mut l, seed)?;
            grad_check(&mut l, &[2, 3, 10, 4], opts, |l, x| l.forward(x, Mode::Train))
        }
        "se" => {
            let mut l = SqueezeExcite::<f64>::new("se", 8, 4, seed)?;
            grad_check(&mut l, &[2, 8, 4, 5], opts, |l, x| l.forward(x))
        }
        "tfwse" => {
            let mut l = TfwSqueezeExcite::<f64>::new("tfwse", 10, 4, seed)?;
            grad_check(&mut l, &[2, 3, 10, 4], opts, |l, x| l.forward(x))
        }
        "dropout" => {
            let d = Dropout::new("dropout", 0.1)?;
            let mut l = Linear::<f64>::new("linear", 6, 4, seed)?;
            grad_check(&mut l, &[5, 6], opts, |l, x| d.forward(&l.forward(x)?, &ctx))
        }
        "block_normal" | "block_transition" => {
            let normal = name == "block_normal";
            let spec = BlockSpec {
                kind: if normal {
                    BlockKind::Normal
                } else {
                    BlockKind::Transition
                },
                in_channels: if normal { 8 } else { 4 },
                out_channels: 8,
                freq_stride: if normal { 1 } else { 2 },
                dilation: 2,
                subbands: 5,
                dropout: 0.0,
            };
            let mut l = BcResBlock::<f64>::new(name, spec, seed)?;
            let shape = if normal { [2, 8, 5, 7] } else { [2, 4, 10, 5] };
            grad_check(&mut l, &shape, opts, |l, x| l.forward(x, &ctx))
        }
        "model" => {
            let cfg = ModelConfig {
                dropout: 0.0,
                frames: 20,
                seed,
                ..ModelConfig::default().with_attention(AttentionMode::SeTfwse)
            };
            let mut m = build_model::<f64>(&cfg)?;
            grad_check(&mut m, &[2, 1, 40, 20], opts, |m, x| m.forward(x, &ctx))
        }
        _ => Err(Error::InvalidArgument(format!(
            "unknown component {name:?}; expected one of {}",
            COMPONENTS.join(", ")
        ))),
    }
}
