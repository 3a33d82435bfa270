//! Audio input and 40-band log-Mel features.
//!
//! Frames are 30 ms (480 samples) with a 10 ms (160 sample) hop at 16 kHz.

mod mel;
mod wav;

use crate::error::{Error, Result};

pub use mel::{hz_to_mel, log_mel, mel_to_hz, FeatureExtractor, FeatureMap, MelFilterbank};
pub use wav::{encode_wav, load_wav, parse_wav, write_wav};

pub const SAMPLE_RATE: u32 = 16_000;
pub const WINDOW: usize = 480;
pub const HOP: usize = 160;
pub const N_FFT: usize = 512;
pub const N_MELS: usize = 40;
pub const LOG_FLOOR: f64 = 1e-6;

/// Samples per clip for one-second corpora.
pub const GSC_SAMPLES: usize = 16_000;
/// Samples per clip for the roughly 1.1 s tower-command style corpora.
pub const TOWER_SAMPLES: usize = 17_600;

/// Mono 16 kHz waveform.
#[derive(Debug, Clone, PartialEq)]
pub struct AudioClip {
    samples: Vec<f32>,
    sample_rate: u32,
}

impl AudioClip {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if sample_rate != SAMPLE_RATE {
            return Err(Error::InvalidArgument(format!(
                "sample_rate={sample_rate}, expected {SAMPLE_RATE}"
            )));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidArgument(format!("sample {i} is not finite")));
        }
        Ok(AudioClip { samples, sample_rate })
    }

    pub fn from_samples(samples: Vec<f32>) -> Result<Self> {
        Self::new(samples, SAMPLE_RATE)
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn into_samples(self) -> Vec<f32> {
        self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        self.sample_rate
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        if self.samples.is_empty() {
            return 0.0;
        }
        self.samples.iter().map(|&s| (s as f64) * (s as f64)).sum::<f64>() / self.samples.len() as f64
    }
}

/// Brings a clip to exactly `target` samples: short clips get trailing
/// zeros, long clips are center-cropped.
pub fn fix_length(clip: &AudioClip, target: usize) -> Result<AudioClip> {
    if target == 0 {
        return Err(Error::InvalidArgument("target length must be at least 1".into()));
    }
    let s = clip.samples();
    let out = if s.len() >= target {
        let start = (s.len() - target) / 2;
        s[start..start + target].to_vec()
    } else {
        let mut v = s.to_vec();
        v.resize(target, 0.0);
        v
    };
    Ok(AudioClip {
        samples: out,
        sample_rate: clip.sample_rate,
    })
}

/// Number of frames for a clip of `len` samples, if it holds at least one window.
pub fn frame_count(len: usize) -> Option<usize> {
    (len >= WINDOW).then(|| 1 + (len - WINDOW) / HOP)
}
