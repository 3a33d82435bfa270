//! Broadcasted residual block.
//!
//! ```text
//! normal:      y = relu(x  + f2(x)  + BC(f1(avgpool_F(f2(x)))))
//! transition:  y = relu(      f2(x') + BC(f1(avgpool_F(f2(x')))))   x' = relu(bn(pw(x)))
//! ```
//!
//! `f2` is a 3x1 frequency-depthwise convolution followed by sub-spectral
//! normalization; `f1` is a 1x3 dilated temporal-depthwise convolution,
//! batch norm, a 1x1 convolution and dropout. `BC` broadcasts the
//! `[N, C, 1, T]` temporal features over every frequency bin.

use super::{BatchNorm2d, Conv2d, ConvSpec, Dropout, ForwardCtx, Layer, NormState, Param, SubSpectralNorm};
use crate::error::{Error, Result};
use crate::tensor::{Element, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BlockKind {
    Normal,
    Transition,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BlockSpec {
    pub kind: BlockKind,
    pub in_channels: usize,
    pub out_channels: usize,
    /// frequency stride of the frequency-depthwise convolution
    pub freq_stride: usize,
    /// temporal dilation of the temporal-depthwise convolution
    pub dilation: usize,
    pub subbands: usize,
    pub dropout: f64,
}

#[derive(Debug, Clone)]
struct Projection<E: Element> {
    conv: Conv2d<E>,
    bn: BatchNorm2d<E>,
}

#[derive(Debug, Clone)]
pub struct BcResBlock<E: Element> {
    spec: BlockSpec,
    projection: Option<Projection<E>>,
    freq_dw: Conv2d<E>,
    ssn: SubSpectralNorm<E>,
    temp_dw: Conv2d<E>,
    temp_bn: BatchNorm2d<E>,
    temp_pw: Conv2d<E>,
    dropout: Dropout,
}

impl<E: Element> BcResBlock<E> {
    pub fn new(name: &str, spec: BlockSpec, seed: u64) -> Result<Self> {
        let c = spec.out_channels;
        let projection = match spec.kind {
            BlockKind::Normal => {
                if spec.in_channels != c || spec.freq_stride != 1 {
                    return Err(Error::InvalidConfig(format!(
                        "{name}: normal block must keep channels and frequency extent ({spec:?})"
                    )));
                }
                None
            }
            BlockKind::Transition => Some(Projection {
                conv: Conv2d::new(
                    &format!("{name}.proj"),
                    ConvSpec::pointwise(spec.in_channels, c),
                    false,
                    seed,
                )?,
                bn: BatchNorm2d::new(&format!("{name}.proj_bn"), c)?,
            }),
        };
        let freq_spec = ConvSpec::depthwise(c, [3, 1])
            .stride([spec.freq_stride, 1])
            .padding([1, 0]);
        let temp_spec = ConvSpec::depthwise(c, [1, 3])
            .dilation([1, spec.dilation])
            .padding([0, spec.dilation]);
        Ok(BcResBlock {
            spec,
            projection,
            freq_dw: Conv2d::new(&format!("{name}.freq_dw"), freq_spec, false, seed)?,
            ssn: SubSpectralNorm::new(&format!("{name}.ssn"), c, spec.subbands)?,
            temp_dw: Conv2d::new(&format!("{name}.temp_dw"), temp_spec, false, seed)?,
            temp_bn: BatchNorm2d::new(&format!("{name}.temp_bn"), c)?,
            temp_pw: Conv2d::new(&format!("{name}.temp_pw"), ConvSpec::pointwise(c, c), false, seed)?,
            dropout: Dropout::new(&format!("{name}.dropout"), spec.dropout)?,
        })
    }

    pub fn spec(&self) -> &BlockSpec {
        &self.spec
    }

    /// `f2`: frequency-depthwise convolution and sub-spectral norm.
    pub fn f2(&self, x: &Tensor<E>, ctx: &ForwardCtx) -> Result<Tensor<E>> {
        self.ssn.forward(&self.freq_dw.forward(x)?, ctx.mode)
    }

    /// `f1` on `[N, C, 1, T]` temporal features.
    pub fn f1(&self, a: &Tensor<E>, ctx: &ForwardCtx) -> Result<Tensor<E>> {
        let h = self.temp_dw.forward(a)?;
        let h = self.temp_bn.forward(&h, ctx.mode)?;
        let h = self.temp_pw.forward(&h)?;
        self.dropout.forward(&h, ctx)
    }

    pub fn forward(&self, x: &Tensor<E>, ctx: &ForwardCtx) -> Result<Tensor<E>> {
        let input = match &self.projection {
            Some(p) => p.bn.forward(&p.conv.forward(x)?, ctx.mode)?.relu(),
            None => x.clone(),
        };
        let f2 = self.f2(&input, ctx)?;
        let temporal = f2.mean(&[2], true)?;
        let f1 = self.f1(&temporal, ctx)?;
        // broadcast over frequency happens in the add
        let mixed = f2.add(&f1)?;
        let y = match self.spec.kind {
            BlockKind::Normal => {
                if mixed.shape() != x.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "bc_resblock residual",
                        lhs: x.shape().to_vec(),
                        rhs: mixed.shape().to_vec(),
                    });
                }
                x.add(&mixed)?
            }
            BlockKind::Transition => mixed,
        };
        Ok(y.relu())
    }
}

impl<E: Element> Layer<E> for BcResBlock<E> {
    fn params(&self) -> Vec<&Param<E>> {
        let mut p = Vec::new();
        if let Some(proj) = &self.projection {
            p.extend(proj.conv.params());
            p.extend(proj.bn.params());
        }
        p.extend(self.freq_dw.params());
        p.extend(self.ssn.params());
        p.extend(self.temp_dw.params());
        p.extend(self.temp_bn.params());
        p.extend(self.temp_pw.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        let mut p = Vec::new();
        if let Some(proj) = &mut self.projection {
            p.extend(proj.conv.params_mut());
            p.extend(proj.bn.params_mut());
        }
        p.extend(self.freq_dw.params_mut());
        p.extend(self.ssn.params_mut());
        p.extend(self.temp_dw.params_mut());
        p.extend(self.temp_bn.params_mut());
        p.extend(self.temp_pw.params_mut());
        p
    }

    fn norm_states(&self) -> Vec<&NormState<E>> {
        let mut s = Vec::new();
        if let Some(proj) = &self.projection {
            s.extend(proj.bn.norm_states());
        }
        s.extend(self.ssn.norm_states());
        s.extend(self.temp_bn.norm_states());
        s
    }
}
