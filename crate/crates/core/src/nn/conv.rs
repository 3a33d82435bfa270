use rayon::prelude::*;

use super::{Layer, Param};
use crate::error::{Error, Result};
use crate::tensor::{Backward, Element, Tensor};

/// Geometry of a 2-D cross-correlation over (frequency, time).
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ConvSpec {
    pub in_channels: usize,
    pub out_channels: usize,
    pub kernel: [usize; 2],
    pub stride: [usize; 2],
    pub dilation: [usize; 2],
    pub padding: [usize; 2],
    pub groups: usize,
}

impl ConvSpec {
    pub fn new(in_channels: usize, out_channels: usize, kernel: [usize; 2]) -> Self {
        ConvSpec {
            in_channels,
            out_channels,
            kernel,
            stride: [1, 1],
            dilation: [1, 1],
            padding: [0, 0],
            groups: 1,
        }
    }

    pub fn pointwise(in_channels: usize, out_channels: usize) -> Self {
        Self::new(in_channels, out_channels, [1, 1])
    }

    /// One filter per channel.
    pub fn depthwise(channels: usize, kernel: [usize; 2]) -> Self {
        Self {
            groups: channels,
            ..Self::new(channels, channels, kernel)
        }
    }

    pub fn stride(mut self, s: [usize; 2]) -> Self {
        self.stride = s;
        self
    }

    pub fn dilation(mut self, d: [usize; 2]) -> Self {
        self.dilation = d;
        self
    }

    pub fn padding(mut self, p: [usize; 2]) -> Self {
        self.padding = p;
        self
    }

    pub fn groups(mut self, g: usize) -> Self {
        self.groups = g;
        self
    }

    pub fn is_depthwise(&self) -> bool {
        self.groups == self.in_channels && self.groups == self.out_channels
    }

    pub fn weight_shape(&self) -> [usize; 4] {
        [
            self.out_channels,
            self.in_channels / self.groups.max(1),
            self.kernel[0],
            self.kernel[1],
        ]
    }

    pub fn fan_in(&self) -> usize {
        let [_, cin_g, kh, kw] = self.weight_shape();
        cin_g * kh * kw
    }

    pub fn validate(&self) -> Result<()> {
        let g = self.groups;
        if g == 0 || self.in_channels == 0 || self.out_channels == 0 {
            return Err(Error::InvalidGeometry(format!("{self:?}: zero channels or groups")));
        }
        if !self.in_channels.is_multiple_of(g) || !self.out_channels.is_multiple_of(g) {
            return Err(Error::ShapeMismatch {
                op: "conv2d groups",
                lhs: vec![self.in_channels, self.out_channels],
                rhs: vec![g],
            });
        }
        if self.kernel.contains(&0) || self.stride.contains(&0) || self.dilation.contains(&0) {
            return Err(Error::InvalidGeometry(format!(
                "{self:?}: kernel, stride and dilation must be positive"
            )));
        }
        Ok(())
    }

    /// Output extent along axis `a` for input extent `e`.
    pub fn out_extent(&self, a: usize, e: usize) -> Result<usize> {
        let span = self.dilation[a] * (self.kernel[a] - 1) + 1;
        let padded = e + 2 * self.padding[a];
        if padded < span {
            return Err(Error::InvalidGeometry(format!(
                "axis {a}: extent {e} with padding {} is smaller than kernel span {span}",
                self.padding[a]
            )));
        }
        Ok((padded - span) / self.stride[a] + 1)
    }
}

#[derive(Debug, Clone, Copy)]
struct Geometry {
    n: usize,
    cin: usize,
    cout: usize,
    cin_g: usize,
    cout_g: usize,
    h: usize,
    w: usize,
    ho: usize,
    wo: usize,
    kh: usize,
    kw: usize,
    sh: usize,
    sw: usize,
    dh: usize,
    dw: usize,
    ph: usize,
    pw: usize,
}

impl Geometry {
    /// Input row for output row `oy` and kernel row `ky`, if inside the image.
    #[inline]
    fn in_row(&self, oy: usize, ky: usize) -> Option<usize> {
        (oy * self.sh + ky * self.dh)
            .checked_sub(self.ph)
            .filter(|&r| r < self.h)
    }

    /// Half-open range of output columns whose input column is in bounds for
    /// kernel column `kx`, plus the signed input offset of column 0.
    #[inline]
    fn col_range(&self, kx: usize) -> (usize, usize, isize) {
        let shift = (kx * self.dw) as isize - self.pw as isize;
        let sw = self.sw as isize;
        // ox*sw + shift >= 0
        let lo = if shift >= 0 { 0 } else { ((-shift) + sw - 1) / sw };
        // ox*sw + shift <= w - 1
        let top = self.w as isize - 1 - shift;
        let hi = if top < 0 {
            0
        } else {
            (top / sw + 1).min(self.wo as isize)
        };
        (lo as usize, hi.max(lo) as usize, shift)
    }
}

fn forward_kernel<E: Element>(x: &[E], wt: &[E], bias: Option<&[E]>, g: &Geometry) -> Vec<E> {
    let plane = g.ho * g.wo;
    let mut out = vec![E::zero(); g.n * g.cout * plane];
    out.par_chunks_mut(plane).enumerate().for_each(|(idx, oplane)| {
        let (b, oc) = (idx / g.cout, idx % g.cout);
        if let Some(bias) = bias {
            oplane.iter_mut().for_each(|v| *v = bias[oc]);
        }
        let group = oc / g.cout_g;
        for icg in 0..g.cin_g {
            let ic = group * g.cin_g + icg;
            let xin = &x[(b * g.cin + ic) * g.h * g.w..][..g.h * g.w];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = wt[((oc * g.cin_g + icg) * g.kh + ky) * g.kw + kx];
                    let (lo, hi, shift) = g.col_range(kx);
                    for oy in 0..g.ho {
                        let Some(iy) = g.in_row(oy, ky) else { continue };
                        let xrow = &xin[iy * g.w..(iy + 1) * g.w];
                        let orow = &mut oplane[oy * g.wo..(oy + 1) * g.wo];
                        if g.sw == 1 {
                            let start = (lo as isize + shift) as usize;
                            let xs = &xrow[start..start + (hi - lo)];
                            orow[lo..hi].iter_mut().zip(xs).for_each(|(o, &xv)| *o += wv * xv);
                        } else {
                            for ox in lo..hi {
                                let ix = (ox as isize * g.sw as isize + shift) as usize;
                                orow[ox] += wv * xrow[ix];
                            }
                        }
                    }
                }
            }
        }
    });
    out
}

fn input_grad<E: Element>(dy: &[E], wt: &[E], g: &Geometry) -> Vec<E> {
    let plane = g.h * g.w;
    let oplane = g.ho * g.wo;
    let mut dx = vec![E::zero(); g.n * g.cin * plane];
    dx.par_chunks_mut(plane).enumerate().for_each(|(idx, dxp)| {
        let (b, ic) = (idx / g.cin, idx % g.cin);
        let group = ic / g.cin_g;
        let icg = ic % g.cin_g;
        for oc in group * g.cout_g..(group + 1) * g.cout_g {
            let dyp = &dy[(b * g.cout + oc) * oplane..][..oplane];
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let wv = wt[((oc * g.cin_g + icg) * g.kh + ky) * g.kw + kx];
                    let (lo, hi, shift) = g.col_range(kx);
                    for oy in 0..g.ho {
                        let Some(iy) = g.in_row(oy, ky) else { continue };
                        let dyrow = &dyp[oy * g.wo..(oy + 1) * g.wo];
                        let dxrow = &mut dxp[iy * g.w..(iy + 1) * g.w];
                        for ox in lo..hi {
                            let ix = (ox as isize * g.sw as isize + shift) as usize;
                            dxrow[ix] += wv * dyrow[ox];
                        }
                    }
                }
            }
        }
    });
    dx
}

fn weight_grad<E: Element>(dy: &[E], x: &[E], g: &Geometry) -> Vec<E> {
    let per_oc = g.cin_g * g.kh * g.kw;
    let oplane = g.ho * g.wo;
    let mut dw = vec![E::zero(); g.cout * per_oc];
    dw.par_chunks_mut(per_oc).enumerate().for_each(|(oc, dwo)| {
        let group = oc / g.cout_g;
        for icg in 0..g.cin_g {
            let ic = group * g.cin_g + icg;
            for ky in 0..g.kh {
                for kx in 0..g.kw {
                    let (lo, hi, shift) = g.col_range(kx);
                    let mut acc = E::zero();
                    for b in 0..g.n {
                        let dyp = &dy[(b * g.cout + oc) * oplane..][..oplane];
                        let xin = &x[(b * g.cin + ic) * g.h * g.w..][..g.h * g.w];
                        for oy in 0..g.ho {
                            let Some(iy) = g.in_row(oy, ky) else { continue };
                            let dyrow = &dyp[oy * g.wo..(oy + 1) * g.wo];
                            let xrow = &xin[iy * g.w..(iy + 1) * g.w];
                            for ox in lo..hi {
                                let ix = (ox as isize * g.sw as isize + shift) as usize;
                                acc += dyrow[ox] * xrow[ix];
                            }
                        }
                    }
                    dwo[(icg * g.kh + ky) * g.kw + kx] = acc;
                }
            }
        }
    });
    dw
}

struct ConvOp {
    geo: Geometry,
    has_bias: bool,
}

impl<E: Element> Backward<E> for ConvOp {
    fn name(&self) -> &'static str {
        "conv2d"
    }

    fn backward(&self, inputs: &[Tensor<E>], _out: &[E], grad: &[E]) -> Vec<Option<Vec<E>>> {
        let g = &self.geo;
        let (x, w) = (&inputs[0], &inputs[1]);
        let mut grads = vec![
            x.requires_grad().then(|| input_grad(grad, w.data(), g)),
            w.requires_grad().then(|| weight_grad(grad, x.data(), g)),
        ];
        if self.has_bias {
            let plane = g.ho * g.wo;
            grads.push(inputs[2].requires_grad().then(|| {
                let mut db = vec![E::zero(); g.cout];
                for b in 0..g.n {
                    for (oc, d) in db.iter_mut().enumerate() {
                        *d += grad[(b * g.cout + oc) * plane..][..plane].iter().copied().sum();
                    }
                }
                db
            }));
        }
        grads
    }
}

/// Zero-padded, strided, dilated, grouped cross-correlation.
///
/// `x` is `[N, in_channels, F, T]`, `weight` is `[out, in/groups, kf, kt]`.
pub fn conv2d<E: Element>(
    x: &Tensor<E>,
    spec: &ConvSpec,
    weight: &Tensor<E>,
    bias: Option<&Tensor<E>>,
) -> Result<Tensor<E>> {
    spec.validate()?;
    let xs = x.shape();
    if xs.len() != 4 || xs[1] != spec.in_channels {
        return Err(Error::ShapeMismatch {
            op: "conv2d input",
            lhs: xs.to_vec(),
            rhs: vec![0, spec.in_channels, 0, 0],
        });
    }
    if weight.shape() != spec.weight_shape() {
        return Err(Error::ShapeMismatch {
            op: "conv2d weight",
            lhs: weight.shape().to_vec(),
            rhs: spec.weight_shape().to_vec(),
        });
    }
    if let Some(b) = bias {
        if b.shape() != [spec.out_channels] {
            return Err(Error::ShapeMismatch {
                op: "conv2d bias",
                lhs: b.shape().to_vec(),
                rhs: vec![spec.out_channels],
            });
        }
    }
    let geo = Geometry {
        n: xs[0],
        cin: spec.in_channels,
        cout: spec.out_channels,
        cin_g: spec.in_channels / spec.groups,
        cout_g: spec.out_channels / spec.groups,
        h: xs[2],
        w: xs[3],
        ho: spec.out_extent(0, xs[2])?,
        wo: spec.out_extent(1, xs[3])?,
        kh: spec.kernel[0],
        kw: spec.kernel[1],
        sh: spec.stride[0],
        sw: spec.stride[1],
        dh: spec.dilation[0],
        dw: spec.dilation[1],
        ph: spec.padding[0],
        pw: spec.padding[1],
    };
    let data = forward_kernel(x.data(), weight.data(), bias.map(|b| b.data()), &geo);
    let mut inputs = vec![x.clone(), weight.clone()];
    if let Some(b) = bias {
        inputs.push(b.clone());
    }
    Ok(Tensor::from_op(
        vec![geo.n, geo.cout, geo.ho, geo.wo],
        data,
        inputs,
        ConvOp {
            geo,
            has_bias: bias.is_some(),
        },
    ))
}

/// Convolution layer with He-uniform weights and an optional zero bias.
#[derive(Debug, Clone)]
pub struct Conv2d<E: Element> {
    spec: ConvSpec,
    weight: Param<E>,
    bias: Option<Param<E>>,
}

impl<E: Element> Conv2d<E> {
    pub fn new(name: &str, spec: ConvSpec, bias: bool, seed: u64) -> Result<Self> {
        spec.validate()?;
        Ok(Conv2d {
            weight: Param::he_uniform(format!("{name}.weight"), &spec.weight_shape(), spec.fan_in(), seed)?,
            bias: if bias {
                Some(Param::constant(format!("{name}.bias"), &[spec.out_channels], 0.0)?)
            } else {
                None
            },
            spec,
        })
    }

    pub fn spec(&self) -> &ConvSpec {
        &self.spec
    }

    pub fn weight(&self) -> &Param<E> {
        &self.weight
    }

    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        conv2d(
            x,
            &self.spec,
            self.weight.value(),
            self.bias.as_ref().map(|b| b.value()),
        )
    }
}

impl<E: Element> Layer<E> for Conv2d<E> {
    fn params(&self) -> Vec<&Param<E>> {
        std::iter::once(&self.weight).chain(self.bias.as_ref()).collect()
    }

    fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        std::iter::once(&mut self.weight).chain(self.bias.as_mut()).collect()
    }
}
