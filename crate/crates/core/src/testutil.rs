//! Oracles shared by unit tests. Nothing here calls into the backward rules.

use crate::nn::Layer;
use crate::tensor::{no_grad, uniform_vec, Tensor};

pub fn numeric_grad(x: &[f64], eps: f64, f: impl Fn(&[f64]) -> f64) -> Vec<f64> {
    let mut x = x.to_vec();
    (0..x.len())
        .map(|i| {
            let orig = x[i];
            x[i] = orig + eps;
            let up = f(&x);
            x[i] = orig - eps;
            let down = f(&x);
            x[i] = orig;
            (up - down) / (2.0 * eps)
        })
        .collect()
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

pub fn max_rel_err(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(&x, &y)| rel_err(x, y)).fold(0.0, f64::max)
}

fn probe_dot(out: &Tensor<f64>, probe: &[f64]) -> f64 {
    out.data().iter().zip(probe).map(|(a, b)| a * b).sum()
}

/// Max relative error between analytic and central-difference gradients of
/// `sum(probe * fwd(layer, x))` for the input and every parameter element.
pub fn check_layer<L: Layer<f64>>(
    layer: &mut L,
    x_shape: &[usize],
    seed: u64,
    fwd: impl Fn(&L, &Tensor<f64>) -> Tensor<f64>,
) -> f64 {
    let n: usize = x_shape.iter().product();
    let x0 = uniform_vec(n, -1.0, 1.0, seed);
    let x = Tensor::parameter(x_shape, x0.clone()).unwrap();
    for p in layer.params() {
        p.value().zero_grad();
    }
    let out = fwd(layer, &x);
    let probe = uniform_vec(out.numel(), -1.0, 1.0, seed ^ 0x5eed);
    let probe_t = Tensor::from_f64(out.shape(), &probe).unwrap();
    out.mul(&probe_t).unwrap().sum().backward().unwrap();

    let eps = 1e-4;
    let mut worst = {
        let numeric = numeric_grad(&x0, eps, |v| {
            let xt = Tensor::from_f64(x_shape, v).unwrap();
            no_grad(|| probe_dot(&fwd(layer, &xt), &probe))
        });
        max_rel_err(&x.grad().unwrap(), &numeric)
    };

    let count = layer.params().len();
    for k in 0..count {
        let (analytic, init, name) = {
            let p = layer.params()[k];
            (p.grad(), p.value().to_vec(), p.name().to_string())
        };
        let analytic = analytic.unwrap_or_else(|| vec![0.0; init.len()]);
        let mut numeric = Vec::with_capacity(init.len());
        for i in 0..init.len() {
            let mut eval = |delta: f64| {
                let mut v = init.clone();
                v[i] += delta;
                layer.params_mut()[k].set(v).unwrap();
                no_grad(|| probe_dot(&fwd(layer, &Tensor::from_f64(x_shape, &x0).unwrap()), &probe))
            };
            let (up, down) = (eval(eps), eval(-eps));
            numeric.push((up - down) / (2.0 * eps));
        }
        layer.params_mut()[k].set(init).unwrap();
        let err = max_rel_err(&analytic, &numeric);
        assert!(err.is_finite(), "{name}");
        worst = worst.max(err);
    }
    worst
}

/// Direct convolution straight from the definition, one output at a time.
pub fn conv_oracle(
    x: &[f64],
    xs: [usize; 4],
    w: &[f64],
    spec: &crate::nn::ConvSpec,
    bias: Option<&[f64]>,
) -> (Vec<usize>, Vec<f64>) {
    let [n, cin, h, wd] = xs;
    let cout = spec.out_channels;
    let g = spec.groups;
    let (cin_g, cout_g) = (cin / g, cout / g);
    let [kh, kw] = spec.kernel;
    let ho = (h + 2 * spec.padding[0] - spec.dilation[0] * (kh - 1) - 1) / spec.stride[0] + 1;
    let wo = (wd + 2 * spec.padding[1] - spec.dilation[1] * (kw - 1) - 1) / spec.stride[1] + 1;
    let mut out = vec![0.0; n * cout * ho * wo];
    for b in 0..n {
        for oc in 0..cout {
            for oy in 0..ho {
                for ox in 0..wo {
                    let mut acc = bias.map_or(0.0, |bv| bv[oc]);
                    let grp = oc / cout_g;
                    for icg in 0..cin_g {
                        let ic = grp * cin_g + icg;
                        for ky in 0..kh {
                            for kx in 0..kw {
                                let iy =
                                    (oy * spec.stride[0] + ky * spec.dilation[0]) as isize - spec.padding[0] as isize;
                                let ix =
                                    (ox * spec.stride[1] + kx * spec.dilation[1]) as isize - spec.padding[1] as isize;
                                if iy < 0 || ix < 0 || iy >= h as isize || ix >= wd as isize {
                                    continue;
                                }
                                let xv = x[((b * cin + ic) * h + iy as usize) * wd + ix as usize];
                                let wv = w[((oc * cin_g + icg) * kh + ky) * kw + kx];
                                acc += xv * wv;
                            }
                        }
                    }
                    out[((b * cout + oc) * ho + oy) * wo + ox] = acc;
                }
            }
        }
    }
    (vec![n, cout, ho, wo], out)
}
