use std::fmt;
use std::str::FromStr;

use crate::data::GSC_CLASSES;
use crate::dsp::{frame_count, GSC_SAMPLES, N_MELS};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionMode {
    None,
    SeTfwse,
}

impl fmt::Display for AttentionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            AttentionMode::None => "none",
            AttentionMode::SeTfwse => "se_tfwse",
        })
    }
}

impl FromStr for AttentionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "none" => Ok(AttentionMode::None),
            "se_tfwse" => Ok(AttentionMode::SeTfwse),
            _ => Err(Error::InvalidConfig(format!(
                "attention must be none or se_tfwse, got {s:?}"
            ))),
        }
    }
}

/// Attention block inserted after a stage.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttentionKind {
    Se,
    Tfwse,
}

/// Which attention block (if any) follows each of the four stages.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Placement(pub [Option<AttentionKind>; 4]);

impl Default for Placement {
    fn default() -> Self {
        use AttentionKind::*;
        Placement([Some(Tfwse), Some(Tfwse), Some(Se), Some(Se)])
    }
}

impl fmt::Display for Placement {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<&str> = self
            .0
            .iter()
            .map(|k| match k {
                None => "none",
                Some(AttentionKind::Se) => "se",
                Some(AttentionKind::Tfwse) => "tfwse",
            })
            .collect();
        f.write_str(&parts.join(","))
    }
}

impl FromStr for Placement {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        if parts.len() != 4 {
            return Err(Error::InvalidConfig(format!(
                "placement needs 4 comma-separated entries, got {s:?}"
            )));
        }
        let mut out = [None; 4];
        for (slot, p) in out.iter_mut().zip(parts) {
            *slot = match p {
                "none" => None,
                "se" => Some(AttentionKind::Se),
                "tfwse" => Some(AttentionKind::Tfwse),
                _ => return Err(Error::InvalidConfig(format!("unknown attention kind {p:?}"))),
            };
        }
        Ok(Placement(out))
    }
}

/// Everything needed to rebuild a model deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelConfig {
    /// width multiplier; channel counts are `round(base * tau)`
    pub tau: f64,
    pub num_classes: usize,
    /// empty, or one name per class
    pub class_names: Vec<String>,
    pub ssn_subbands: usize,
    pub se_ratio: usize,
    pub attention: AttentionMode,
    /// only consulted when `attention` is `SeTfwse`
    pub placement: Placement,
    pub dropout: f64,
    /// input time extent T
    pub frames: usize,
    pub seed: u64,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            tau: 1.0,
            num_classes: GSC_CLASSES.len(),
            class_names: GSC_CLASSES.iter().map(|s| s.to_string()).collect(),
            ssn_subbands: 5,
            se_ratio: 4,
            attention: AttentionMode::SeTfwse,
            placement: Placement::default(),
            dropout: 0.1,
            frames: frame_count(GSC_SAMPLES).expect("one second holds a frame"),
            seed: 0,
        }
    }
}

pub const MODEL_KEYS: &[&str] = &[
    "tau",
    "num_classes",
    "class_names",
    "ssn_subbands",
    "se_ratio",
    "attention",
    "placement",
    "dropout",
    "frames",
    "seed",
];

fn parse<T: FromStr>(key: &str, value: &str) -> Result<T> {
    value
        .trim()
        .parse()
        .map_err(|_| Error::InvalidConfig(format!("{key}: cannot parse {value:?}")))
}

impl ModelConfig {
    pub fn with_tau(mut self, tau: f64) -> Self {
        self.tau = tau;
        self
    }

    pub fn with_attention(mut self, attention: AttentionMode) -> Self {
        self.attention = attention;
        self
    }

    pub fn with_classes(mut self, names: &[&str]) -> Self {
        self.num_classes = names.len();
        self.class_names = names.iter().map(|s| s.to_string()).collect();
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Stage attention after resolving the attention mode.
    pub fn effective_placement(&self) -> [Option<AttentionKind>; 4] {
        match self.attention {
            AttentionMode::None => [None; 4],
            AttentionMode::SeTfwse => self.placement.0,
        }
    }

    pub fn class_name(&self, class: usize) -> String {
        self.class_names
            .get(class)
            .cloned()
            .unwrap_or_else(|| class.to_string())
    }

    /// Channel count for a base width at this tau.
    pub fn width(&self, base: usize) -> Result<usize> {
        let w = (base as f64 * self.tau).round();
        if w < 1.0 {
            return Err(Error::InvalidConfig(format!(
                "tau={} scales {base} channels to {w}",
                self.tau
            )));
        }
        Ok(w as usize)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::InvalidConfig(format!("tau must be positive, got {}", self.tau)));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidConfig(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        if !self.class_names.is_empty() && self.class_names.len() != self.num_classes {
            return Err(Error::InvalidConfig(format!(
                "{} class names for {} classes",
                self.class_names.len(),
                self.num_classes
            )));
        }
        if self.ssn_subbands == 0 || self.se_ratio == 0 || self.frames == 0 {
            return Err(Error::InvalidConfig(
                "ssn_subbands, se_ratio and frames must be positive".into(),
            ));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidConfig(format!("dropout {} not in [0, 1)", self.dropout)));
        }
        Ok(())
    }

    /// Applies one `key=value` setting. Returns `false` for keys that are not model keys.
    pub fn set(&mut self, key: &str, value: &str) -> Result<bool> {
        match key {
            "tau" => self.tau = parse(key, value)?,
            "num_classes" => {
                self.num_classes = parse(key, value)?;
                if self.class_names.len() != self.num_classes {
                    self.class_names.clear();
                }
            }
            "class_names" => {
                self.class_names = value
                    .split(',')
                    .map(|s| s.trim().to_string())
                    .filter(|s| !s.is_empty())
                    .collect();
                if !self.class_names.is_empty() {
                    self.num_classes = self.class_names.len();
                }
            }
            "ssn_subbands" => self.ssn_subbands = parse(key, value)?,
            "se_ratio" => self.se_ratio = parse(key, value)?,
            "attention" => self.attention = value.trim().parse()?,
            "placement" => self.placement = value.trim().parse()?,
            "dropout" => self.dropout = parse(key, value)?,
            "frames" => self.frames = parse(key, value)?,
            "seed" => self.seed = parse(key, value)?,
            _ => return Ok(false),
        }
        Ok(true)
    }

    /// Settings in `MODEL_KEYS` order; feeding them back through `set` rebuilds the config.
    pub fn to_pairs(&self) -> Vec<(&'static str, String)> {
        vec![
            ("tau", self.tau.to_string()),
            ("num_classes", self.num_classes.to_string()),
            ("class_names", self.class_names.join(",")),
            ("ssn_subbands", self.ssn_subbands.to_string()),
            ("se_ratio", self.se_ratio.to_string()),
            ("attention", self.attention.to_string()),
            ("placement", self.placement.to_string()),
            ("dropout", self.dropout.to_string()),
            ("frames", self.frames.to_string()),
            ("seed", self.seed.to_string()),
        ]
    }

    pub fn to_text(&self) -> String {
        self.to_pairs().iter().map(|(k, v)| format!("{k}={v}\n")).collect()
    }

    /// Parses `key=value` lines; blank lines and `#` comments are skipped, unknown keys are errors.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut cfg = ModelConfig::default();
        for (key, value) in parse_lines(text)? {
            if !cfg.set(&key, &value)? {
                return Err(Error::InvalidConfig(format!("unknown model key {key:?}")));
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn input_shape(&self) -> [usize; 3] {
        [1, N_MELS, self.frames]
    }
}

/// Splits `key=value` lines, skipping blanks and `#` comments.
pub fn parse_lines(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line
            .split_once('=')
            .ok_or_else(|| Error::InvalidConfig(format!("line {}: expected key=value, got {line:?}", i + 1)))?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    Ok(out)
}
