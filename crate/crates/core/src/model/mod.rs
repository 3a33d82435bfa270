//! The full keyword-spotting network, its parameter accounting and checkpoints.

mod checkpoint;
mod config;

use crate::dsp::N_MELS;
use crate::error::{Error, Result};
use crate::nn::{
    BatchNorm2d, BcResBlock, BlockKind, BlockSpec, Conv2d, ConvSpec, ForwardCtx, Layer, NormState, Param,
    SqueezeExcite, TfwSqueezeExcite,
};
use crate::tensor::{Element, Tensor};

pub use checkpoint::{decode_checkpoint, encode_checkpoint, load_checkpoint, save_checkpoint, NamedTensor, OptimState};
pub use config::{parse_lines, AttentionKind, AttentionMode, ModelConfig, Placement, MODEL_KEYS};

pub const STEM_WIDTH: usize = 16;
pub const STAGE_WIDTHS: [usize; 4] = [8, 12, 16, 20];
pub const STAGE_DEPTHS: [usize; 4] = [2, 2, 4, 4];
pub const STAGE_STRIDES: [usize; 4] = [1, 2, 2, 1];
pub const STAGE_DILATIONS: [usize; 4] = [1, 2, 4, 8];
pub const HEAD_WIDTH: usize = 32;

#[derive(Debug, Clone, PartialEq)]
pub struct StageLayout {
    pub in_channels: usize,
    pub channels: usize,
    pub blocks: usize,
    pub freq_stride: usize,
    pub dilation: usize,
    pub freq_in: usize,
    pub freq_out: usize,
    pub attention: Option<AttentionKind>,
}

/// Resolved layer geometry for one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ArchitectureTable {
    pub stem_channels: usize,
    /// frequency extent after the stem
    pub stem_freq: usize,
    pub stages: Vec<StageLayout>,
    pub head_channels: usize,
    pub num_classes: usize,
}

impl ArchitectureTable {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let stem = ConvSpec::new(1, cfg.width(STEM_WIDTH)?, [5, 5])
            .stride([2, 1])
            .padding([2, 2]);
        let stem_freq = stem.out_extent(0, N_MELS)?;
        let placement = cfg.effective_placement();
        let mut stages = Vec::with_capacity(4);
        let (mut cin, mut freq) = (stem.out_channels, stem_freq);
        for i in 0..4 {
            let channels = cfg.width(STAGE_WIDTHS[i])?;
            let s = STAGE_STRIDES[i];
            // 3-tap kernel, padding 1
            let freq_out = (freq - 1) / s + 1;
            if !freq_out.is_multiple_of(cfg.ssn_subbands) {
                return Err(Error::InvalidConfig(format!(
                    "stage {} frequency extent {freq_out} is not divisible by {} subbands",
                    i + 1,
                    cfg.ssn_subbands
                )));
            }
            stages.push(StageLayout {
                in_channels: cin,
                channels,
                blocks: STAGE_DEPTHS[i],
                freq_stride: s,
                dilation: STAGE_DILATIONS[i],
                freq_in: freq,
                freq_out,
                attention: placement[i],
            });
            cin = channels;
            freq = freq_out;
        }
        if freq < 5 {
            return Err(Error::InvalidConfig(format!(
                "head needs a frequency extent of 5, stage 4 produces {freq}"
            )));
        }
        Ok(ArchitectureTable {
            stem_channels: stem.out_channels,
            stem_freq,
            stages,
            head_channels: cfg.width(HEAD_WIDTH)?,
            num_classes: cfg.num_classes,
        })
    }

    /// Frequency extent at the input, after the stem and after every stage.
    pub fn freq_extents(&self) -> Vec<usize> {
        let mut v = vec![N_MELS, self.stem_freq];
        v.extend(self.stages.iter().map(|s| s.freq_out));
        v
    }
}

#[derive(Debug, Clone)]
pub enum Attention<E: Element> {
    Se(SqueezeExcite<E>),
    Tfwse(TfwSqueezeExcite<E>),
}

impl<E: Element> Attention<E> {
    pub fn forward(&self, x: &Tensor<E>) -> Result<Tensor<E>> {
        match self {
            Attention::Se(a) => a.forward(x),
            Attention::Tfwse(a) => a.forward(x),
        }
    }

    fn layer(&self) -> &dyn Layer<E> {
        match self {
            Attention::Se(a) => a,
            Attention::Tfwse(a) => a,
        }
    }

    fn layer_mut(&mut self) -> &mut dyn Layer<E> {
        match self {
            Attention::Se(a) => a,
            Attention::Tfwse(a) => a,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Stage<E: Element> {
    pub blocks: Vec<BcResBlock<E>>,
    pub attention: Option<Attention<E>>,
}

/// Intermediate activations of one forward pass.
#[derive(Debug)]
pub struct Trace<E: Element> {
    pub stem: Tensor<E>,
    /// output of each stage, after its attention block
    pub stages: Vec<Tensor<E>>,
    pub logits: Tensor<E>,
}

#[derive(Debug, Clone)]
pub struct Model<E: Element = f32> {
    config: ModelConfig,
    table: ArchitectureTable,
    stem: Conv2d<E>,
    stem_bn: BatchNorm2d<E>,
    stages: Vec<Stage<E>>,
    head_dw: Conv2d<E>,
    head_pw: Conv2d<E>,
    head_bn: BatchNorm2d<E>,
    classifier: Conv2d<E>,
}

/// Allocates and initializes every parameter from `config`.
pub fn build_model<E: Element>(config: &ModelConfig) -> Result<Model<E>> {
    let table = ArchitectureTable::new(config)?;
    let seed = config.seed;
    let stem_spec = ConvSpec::new(1, table.stem_channels, [5, 5])
        .stride([2, 1])
        .padding([2, 2]);
    let mut stages = Vec::with_capacity(4);
    for (i, st) in table.stages.iter().enumerate() {
        let mut blocks = Vec::with_capacity(st.blocks);
        for b in 0..st.blocks {
            let spec = BlockSpec {
                kind: if b == 0 {
                    BlockKind::Transition
                } else {
                    BlockKind::Normal
                },
                in_channels: if b == 0 { st.in_channels } else { st.channels },
                out_channels: st.channels,
                freq_stride: if b == 0 { st.freq_stride } else { 1 },
                dilation: st.dilation,
                subbands: config.ssn_subbands,
                dropout: config.dropout,
            };
            blocks.push(BcResBlock::new(&format!("stage{}.block{b}", i + 1), spec, seed)?);
        }
        let name = format!("stage{}.attention", i + 1);
        let attention = match st.attention {
            None => None,
            Some(AttentionKind::Se) => Some(Attention::Se(SqueezeExcite::new(
                &name,
                st.channels,
                config.se_ratio,
                seed,
            )?)),
            Some(AttentionKind::Tfwse) => Some(Attention::Tfwse(TfwSqueezeExcite::new(
                &name,
                st.freq_out,
                config.se_ratio,
                seed,
            )?)),
        };
        stages.push(Stage { blocks, attention });
    }
    let last = table.stages.last().expect("four stages").channels;
    Ok(Model {
        stem: Conv2d::new("stem.conv", stem_spec, false, seed)?,
        stem_bn: BatchNorm2d::new("stem.bn", table.stem_channels)?,
        stages,
        head_dw: Conv2d::new(
            "head.dw",
            ConvSpec::depthwise(last, [5, 5]).padding([0, 2]),
            false,
            seed,
        )?,
        head_pw: Conv2d::new("head.pw", ConvSpec::pointwise(last, table.head_channels), false, seed)?,
        head_bn: BatchNorm2d::new("head.bn", table.head_channels)?,
        classifier: Conv2d::new(
            "head.classifier",
            ConvSpec::pointwise(table.head_channels, config.num_classes),
            true,
            seed,
        )?,
        config: config.clone(),
        table,
    })
}

impl<E: Element> Model<E> {
    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn table(&self) -> &ArchitectureTable {
        &self.table
    }

    pub fn stages(&self) -> &[Stage<E>] {
        &self.stages
    }

    pub fn num_classes(&self) -> usize {
        self.config.num_classes
    }

    fn check_input(&self, x: &Tensor<E>) -> Result<()> {
        let s = x.shape();
        if s.len() != 4 || s[1] != 1 || s[2] != N_MELS || s[3] != self.config.frames {
            return Err(Error::ShapeMismatch {
                op: "model input",
                lhs: s.to_vec(),
                rhs: vec![0, 1, N_MELS, self.config.frames],
            });
        }
        Ok(())
    }

    /// Forward pass keeping every stage output.
    pub fn trace(&self, x: &Tensor<E>, ctx: &ForwardCtx) -> Result<Trace<E>> {
        self.check_input(x)?;
        let stem = self.stem_bn.forward(&self.stem.forward(x)?, ctx.mode)?.relu();
        let mut h = stem.clone();
        let mut outs = Vec::with_capacity(self.stages.len());
        for stage in &self.stages {
            for block in &stage.blocks {
                h = block.forward(&h, ctx)?;
            }
            if let Some(att) = &stage.attention {
                h = att.forward(&h)?;
            }
            outs.push(h.clone());
        }
        let h = self.head_dw.forward(&h)?;
        let h = self.head_bn.forward(&self.head_pw.forward(&h)?, ctx.mode)?.relu();
        let pooled = h.mean(&[2, 3], true)?;
        let logits = self.classifier.forward(&pooled)?;
        let n = x.shape()[0];
        Ok(Trace {
            stem,
            stages: outs,
            logits: logits.reshape(&[n, self.config.num_classes])?,
        })
    }

    /// `[N, 1, 40, T]` log-Mel features to `[N, num_classes]` logits.
    pub fn forward(&self, x: &Tensor<E>, ctx: &ForwardCtx) -> Result<Tensor<E>> {
        Ok(self.trace(x, ctx)?.logits)
    }

    /// Learnable element count (running statistics excluded).
    pub fn count_params(&self) -> usize {
        self.params().iter().map(|p| p.numel()).sum()
    }

    /// Learnable elements grouped by top-level component.
    pub fn param_breakdown(&self) -> Vec<(String, usize)> {
        let mut groups: Vec<(String, usize)> = Vec::new();
        for p in self.params() {
            let name = p.name();
            let key = match name.split('.').next() {
                Some(stage) if stage.starts_with("stage") && name.contains(".attention.") => {
                    format!("{stage}.attention")
                }
                Some(first) => first.to_string(),
                None => name.to_string(),
            };
            match groups.iter_mut().find(|(k, _)| *k == key) {
                Some(g) => g.1 += p.numel(),
                None => groups.push((key, p.numel())),
            }
        }
        groups
    }

    /// Parameter lookup by name.
    pub fn param(&self, name: &str) -> Option<&Param<E>> {
        self.params().into_iter().find(|p| p.name() == name)
    }

    pub fn cast<F: Element>(&self) -> Result<Model<F>> {
        let mut out = build_model::<F>(&self.config)?;
        for (dst, src) in out.params_mut().into_iter().zip(self.params()) {
            dst.set(src.value().cast::<F>().to_vec())?;
        }
        for (dst, src) in out.norm_states().into_iter().zip(self.norm_states()) {
            let conv = |v: Vec<E>| v.into_iter().map(|x| F::of(x.as_f64())).collect();
            dst.set_running(conv(src.running_mean()), conv(src.running_var()))?;
        }
        Ok(out)
    }
}

impl<E: Element> Layer<E> for Model<E> {
    fn params(&self) -> Vec<&Param<E>> {
        let mut p = self.stem.params();
        p.extend(self.stem_bn.params());
        for stage in &self.stages {
            for b in &stage.blocks {
                p.extend(b.params());
            }
            if let Some(a) = &stage.attention {
                p.extend(a.layer().params());
            }
        }
        p.extend(self.head_dw.params());
        p.extend(self.head_pw.params());
        p.extend(self.head_bn.params());
        p.extend(self.classifier.params());
        p
    }

    fn params_mut(&mut self) -> Vec<&mut Param<E>> {
        let mut p = self.stem.params_mut();
        p.extend(self.stem_bn.params_mut());
        for stage in &mut self.stages {
            for b in &mut stage.blocks {
                p.extend(b.params_mut());
            }
            if let Some(a) = &mut stage.attention {
                p.extend(a.layer_mut().params_mut());
            }
        }
        p.extend(self.head_dw.params_mut());
        p.extend(self.head_pw.params_mut());
        p.extend(self.head_bn.params_mut());
        p.extend(self.classifier.params_mut());
        p
    }

    fn norm_states(&self) -> Vec<&NormState<E>> {
        let mut s = self.stem_bn.norm_states();
        for stage in &self.stages {
            for b in &stage.blocks {
                s.extend(b.norm_states());
            }
        }
        s.extend(self.head_bn.norm_states());
        s
    }
}
