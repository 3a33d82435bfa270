use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

use super::{frame_count, AudioClip, HOP, LOG_FLOOR, N_FFT, N_MELS, SAMPLE_RATE, WINDOW};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// HTK mel scale.
pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular filters over the `n_fft / 2 + 1` power bins.
#[derive(Debug, Clone)]
pub struct MelFilterbank {
    n_mels: usize,
    n_bins: usize,
    fmin: f64,
    fmax: f64,
    /// row-major [n_mels, n_bins]
    weights: Vec<f64>,
    /// nonzero column range of each row
    support: Vec<(usize, usize)>,
    centers: Vec<f64>,
}

impl MelFilterbank {
    pub fn new(n_mels: usize, n_fft: usize, sample_rate: u32, fmin: f64, fmax: f64) -> Result<Self> {
        let nyquist = sample_rate as f64 / 2.0;
        if !(fmin >= 0.0 && fmin < fmax) || fmax > nyquist {
            return Err(Error::InvalidArgument(format!(
                "mel band [{fmin}, {fmax}] Hz must satisfy 0 <= fmin < fmax <= {nyquist}"
            )));
        }
        if n_mels == 0 || n_fft < 2 {
            return Err(Error::InvalidArgument("need n_mels >= 1 and n_fft >= 2".into()));
        }
        let n_bins = n_fft / 2 + 1;
        let (lo, hi) = (hz_to_mel(fmin), hz_to_mel(fmax));
        let edges: Vec<f64> = (0..n_mels + 2)
            .map(|i| mel_to_hz(lo + (hi - lo) * i as f64 / (n_mels + 1) as f64))
            .collect();
        let bin_hz = sample_rate as f64 / n_fft as f64;

        let mut weights = vec![0.0; n_mels * n_bins];
        let mut support = Vec::with_capacity(n_mels);
        for m in 0..n_mels {
            let (left, center, right) = (edges[m], edges[m + 1], edges[m + 2]);
            let row = &mut weights[m * n_bins..(m + 1) * n_bins];
            for (k, w) in row.iter_mut().enumerate() {
                let f = k as f64 * bin_hz;
                let rising = (f - left) / (center - left);
                let falling = (right - f) / (right - center);
                *w = rising.min(falling).max(0.0);
            }
            let first = row.iter().position(|&w| w > 0.0);
            let last = row.iter().rposition(|&w| w > 0.0);
            match (first, last) {
                (Some(a), Some(b)) => support.push((a, b + 1)),
                _ => {
                    return Err(Error::InvalidArgument(format!(
                        "mel filter {m} ({left:.1}-{right:.1} Hz) covers no FFT bin; use a larger n_fft or fewer bands"
                    )))
                }
            }
        }
        Ok(MelFilterbank {
            n_mels,
            n_bins,
            fmin,
            fmax,
            weights,
            support,
            centers: edges[1..=n_mels].to_vec(),
        })
    }

    /// 40 bands over 20 Hz - 8 kHz for a 512-point FFT at 16 kHz.
    pub fn standard() -> Self {
        Self::new(N_MELS, N_FFT, SAMPLE_RATE, 20.0, 8000.0).expect("standard filterbank parameters are valid")
    }

    pub fn n_mels(&self) -> usize {
        self.n_mels
    }

    pub fn n_bins(&self) -> usize {
        self.n_bins
    }

    pub fn fmin(&self) -> f64 {
        self.fmin
    }

    pub fn fmax(&self) -> f64 {
        self.fmax
    }

    pub fn row(&self, m: usize) -> &[f64] {
        &self.weights[m * self.n_bins..(m + 1) * self.n_bins]
    }

    /// Center frequency of each band in Hz.
    pub fn centers(&self) -> &[f64] {
        &self.centers
    }

    pub fn weights(&self) -> Tensor<f32> {
        Tensor::from_vec(
            &[self.n_mels, self.n_bins],
            self.weights.iter().map(|&w| w as f32).collect(),
        )
        .expect("filterbank dimensions are consistent")
    }

    fn project(&self, power: &[f64], out: &mut [f64]) {
        for (m, o) in out.iter_mut().enumerate() {
            let (a, b) = self.support[m];
            *o = self.row(m)[a..b].iter().zip(&power[a..b]).map(|(w, p)| w * p).sum();
        }
    }
}

/// Log-Mel spectrogram of shape `[1, n_mels, frames]`.
#[derive(Debug, Clone)]
pub struct FeatureMap {
    values: Tensor<f32>,
}

impl FeatureMap {
    pub fn values(&self) -> &Tensor<f32> {
        &self.values
    }

    pub fn frames(&self) -> usize {
        self.values.shape()[2]
    }

    pub fn bands(&self) -> usize {
        self.values.shape()[1]
    }

    /// Value at (band, frame).
    pub fn at(&self, band: usize, frame: usize) -> f32 {
        self.values.data()[band * self.frames() + frame]
    }

    /// Three little-endian u32 extents `[1, bands, frames]` followed by the
    /// values as little-endian f32.
    pub fn to_blob(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(12 + 4 * self.values.numel());
        for &e in self.values.shape() {
            out.extend_from_slice(&(e as u32).to_le_bytes());
        }
        for v in self.values.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
        out
    }

    pub fn from_blob(bytes: &[u8]) -> Result<Self> {
        let bad = |m: &str| Error::InvalidArgument(format!("feature blob: {m}"));
        if bytes.len() < 12 {
            return Err(bad("shorter than header"));
        }
        let ext: Vec<usize> = bytes[..12]
            .chunks_exact(4)
            .map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize)
            .collect();
        let n = ext.iter().product::<usize>();
        if bytes.len() != 12 + 4 * n {
            return Err(bad("payload length does not match extents"));
        }
        let data = bytes[12..]
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        Ok(FeatureMap {
            values: Tensor::from_vec(&ext, data)?,
        })
    }
}

/// Reusable framing, window, FFT plan and filterbank.
#[derive(Clone)]
pub struct FeatureExtractor {
    filterbank: MelFilterbank,
    window: Vec<f64>,
    fft: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FeatureExtractor {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FeatureExtractor")
            .field("n_mels", &self.filterbank.n_mels)
            .finish()
    }
}

impl Default for FeatureExtractor {
    fn default() -> Self {
        Self::new(MelFilterbank::standard())
    }
}

impl FeatureExtractor {
    pub fn new(filterbank: MelFilterbank) -> Self {
        let n_fft = (filterbank.n_bins - 1) * 2;
        // periodic Hann
        let window = (0..WINDOW)
            .map(|n| 0.5 - 0.5 * (2.0 * std::f64::consts::PI * n as f64 / WINDOW as f64).cos())
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(n_fft);
        FeatureExtractor {
            filterbank,
            window,
            fft,
        }
    }

    pub fn filterbank(&self) -> &MelFilterbank {
        &self.filterbank
    }

    pub fn extract(&self, clip: &AudioClip) -> Result<FeatureMap> {
        let samples = clip.samples();
        let frames = frame_count(samples.len()).ok_or(Error::ClipTooShort {
            len: samples.len(),
            min: WINDOW,
        })?;
        let n_mels = self.filterbank.n_mels;
        let n_bins = self.filterbank.n_bins;
        let n_fft = (n_bins - 1) * 2;

        let mut out = vec![0f32; n_mels * frames];
        let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
        let mut scratch = vec![Complex::new(0.0, 0.0); self.fft.get_inplace_scratch_len()];
        let mut power = vec![0.0; n_bins];
        let mut mel = vec![0.0; n_mels];
        for t in 0..frames {
            let frame = &samples[t * HOP..t * HOP + WINDOW];
            for (i, b) in buf.iter_mut().enumerate() {
                *b = if i < WINDOW {
                    Complex::new(frame[i] as f64 * self.window[i], 0.0)
                } else {
                    Complex::new(0.0, 0.0)
                };
            }
            self.fft.process_with_scratch(&mut buf, &mut scratch);
            for (p, c) in power.iter_mut().zip(&buf) {
                *p = c.norm_sqr();
            }
            self.filterbank.project(&power, &mut mel);
            for (m, &v) in mel.iter().enumerate() {
                out[m * frames + t] = (v + LOG_FLOOR).ln() as f32;
            }
        }
        Ok(FeatureMap {
            values: Tensor::from_vec(&[1, n_mels, frames], out)?,
        })
    }
}

/// One-shot log-Mel extraction; prefer [`FeatureExtractor`] in loops.
pub fn log_mel(clip: &AudioClip, fb: &MelFilterbank) -> Result<FeatureMap> {
    FeatureExtractor::new(fb.clone()).extract(clip)
}
