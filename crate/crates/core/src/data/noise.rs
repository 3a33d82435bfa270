use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use rand::Rng;
use rand_distr::StandardNormal;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::dsp::{load_wav, AudioClip};
use crate::error::{Error, Result};
use crate::nn::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NoiseKind {
    White,
    Pink,
    Brown,
}

impl NoiseKind {
    /// Spectral exponent: power falls as 1/f^alpha.
    pub fn alpha(self) -> f64 {
        match self {
            NoiseKind::White => 0.0,
            NoiseKind::Pink => 1.0,
            NoiseKind::Brown => 2.0,
        }
    }
}

impl fmt::Display for NoiseKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            NoiseKind::White => "white",
            NoiseKind::Pink => "pink",
            NoiseKind::Brown => "brown",
        })
    }
}

impl FromStr for NoiseKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "white" => Ok(NoiseKind::White),
            "pink" => Ok(NoiseKind::Pink),
            "brown" => Ok(NoiseKind::Brown),
            _ => Err(Error::InvalidArgument(format!(
                "noise must be white, pink or brown, got {s:?}"
            ))),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub kind: NoiseKind,
    pub snr_db: f64,
    pub seed: u64,
}

/// Unit-power Gaussian noise whose power spectrum falls as 1/f^alpha.
pub fn colored_noise(n: usize, alpha: f64, seed: u64) -> Result<AudioClip> {
    if n < 2 {
        return Err(Error::InvalidArgument(format!(
            "noise length must be at least 2, got {n}"
        )));
    }
    if !(0.0..=2.0).contains(&alpha) {
        return Err(Error::InvalidArgument(format!(
            "spectral exponent {alpha} not in [0, 2]"
        )));
    }
    let mut r = rng(seed);
    let mut buf: Vec<Complex<f64>> = (0..n).map(|_| Complex::new(r.sample(StandardNormal), 0.0)).collect();
    let mut planner = FftPlanner::new();
    planner.plan_fft_forward(n).process(&mut buf);
    buf[0] = Complex::new(0.0, 0.0);
    for (k, b) in buf.iter_mut().enumerate().skip(1) {
        // bins k and n-k share a frequency, which keeps the spectrum Hermitian
        let f = k.min(n - k) as f64;
        *b *= f.powf(-alpha / 2.0);
    }
    planner.plan_fft_inverse(n).process(&mut buf);
    let power = buf.iter().map(|c| c.re * c.re).sum::<f64>() / n as f64;
    let gain = 1.0 / power.sqrt();
    AudioClip::from_samples(buf.iter().map(|c| (c.re * gain) as f32).collect())
}

/// Factor that brings noise of power `pn` to `snr_db` below a signal of power `ps`.
pub fn noise_scale(ps: f64, pn: f64, snr_db: f64) -> Result<f64> {
    if ps <= 0.0 || pn <= 0.0 {
        return Err(Error::UndefinedSnr);
    }
    Ok((ps / (pn * 10f64.powf(snr_db / 10.0))).sqrt())
}

/// `clip + k * noise` with `k` chosen so the clip-to-scaled-noise power ratio is `snr_db`.
/// An infinite SNR returns the clip unchanged. Nothing is clipped.
pub fn mix_at_snr(clip: &AudioClip, noise: &AudioClip, snr_db: f64) -> Result<AudioClip> {
    if clip.len() != noise.len() {
        return Err(Error::ShapeMismatch {
            op: "mix_at_snr",
            lhs: vec![clip.len()],
            rhs: vec![noise.len()],
        });
    }
    if snr_db == f64::INFINITY {
        return Ok(clip.clone());
    }
    let k = noise_scale(clip.power(), noise.power(), snr_db)?;
    let mixed = clip
        .samples()
        .iter()
        .zip(noise.samples())
        .map(|(&s, &n)| (s as f64 + k * n as f64) as f32)
        .collect();
    AudioClip::from_samples(mixed)
}

/// Background recordings held in memory for silence generation.
#[derive(Debug, Clone, Default)]
pub struct BackgroundPool {
    clips: Vec<AudioClip>,
}

impl BackgroundPool {
    pub fn load(paths: &[PathBuf]) -> Result<Self> {
        let clips = paths.iter().map(load_wav).collect::<Result<Vec<_>>>()?;
        Ok(BackgroundPool { clips })
    }

    pub fn from_clips(clips: Vec<AudioClip>) -> Self {
        BackgroundPool { clips }
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Random contiguous crop of `target` samples, scaled by a factor drawn from [0, 1].
    pub fn sample(&self, target: usize, seed: u64) -> Result<AudioClip> {
        let usable: Vec<&AudioClip> = self.clips.iter().filter(|c| c.len() >= target).collect();
        if usable.is_empty() || target == 0 {
            return Err(Error::SilenceUnavailable(target));
        }
        let mut r = rng(seed);
        let clip = usable[r.random_range(0..usable.len())];
        let offset = r.random_range(0..=clip.len() - target);
        let scale: f32 = r.random_range(0.0..=1.0);
        AudioClip::from_samples(
            clip.samples()[offset..offset + target]
                .iter()
                .map(|&s| s * scale)
                .collect(),
        )
    }
}

pub fn sample_silence(background_paths: &[PathBuf], target: usize, seed: u64) -> Result<AudioClip> {
    BackgroundPool::load(background_paths)?.sample(target, seed)
}
