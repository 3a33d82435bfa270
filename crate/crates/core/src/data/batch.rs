use std::collections::HashMap;
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use rand::seq::SliceRandom;
use rayon::prelude::*;

use super::{colored_noise, mix_at_snr, BackgroundPool, DatasetManifest, NoiseSpec, Split};
use crate::dsp::{fix_length, frame_count, load_wav, AudioClip, FeatureExtractor, N_MELS};
use crate::error::{Error, Result};
use crate::nn::{mix_seed, rng};
use crate::tensor::Tensor;

/// One scheduled example of an epoch.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Example {
    File {
        path: PathBuf,
        label: usize,
    },
    /// generated from background noise with this seed
    Silence {
        label: usize,
        seed: u64,
    },
}

impl Example {
    pub fn label(&self) -> usize {
        match self {
            Example::File { label, .. } | Example::Silence { label, .. } => *label,
        }
    }
}

/// Examples scheduled for one pass over a split, in emission order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SplitPlan {
    pub split: Split,
    pub examples: Vec<Example>,
}

#[derive(Debug, Clone)]
pub struct Batch {
    /// `[B, 1, 40, T]`
    pub features: Tensor<f32>,
    pub labels: Vec<usize>,
}

impl Batch {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }
}

/// Turns a manifest into feature batches.
#[derive(Debug)]
pub struct Loader {
    manifest: DatasetManifest,
    extractor: FeatureExtractor,
    background: BackgroundPool,
    cache: Option<Mutex<HashMap<PathBuf, Arc<Vec<f32>>>>>,
    noise: Option<NoiseSpec>,
    /// share of each GSC epoch drawn from the unknown class
    pub unknown_frac: f64,
    /// share of each GSC epoch made of generated silence
    pub silence_frac: f64,
}

impl Loader {
    pub fn new(manifest: DatasetManifest) -> Result<Self> {
        let background = if manifest.silence_label.is_some() {
            BackgroundPool::load(&manifest.background_paths)?
        } else {
            BackgroundPool::default()
        };
        Ok(Loader {
            manifest,
            extractor: FeatureExtractor::default(),
            background,
            cache: Some(Mutex::new(HashMap::new())),
            noise: None,
            unknown_frac: 0.1,
            silence_frac: 0.1,
        })
    }

    pub fn with_fractions(mut self, unknown: f64, silence: f64) -> Self {
        self.unknown_frac = unknown;
        self.silence_frac = silence;
        self
    }

    /// Keep clean file features in memory after the first extraction.
    pub fn with_cache(mut self, on: bool) -> Self {
        self.cache = on.then(|| Mutex::new(HashMap::new()));
        self
    }

    /// Mix noise into every recorded example before feature extraction.
    pub fn with_noise(mut self, noise: Option<NoiseSpec>) -> Self {
        self.noise = noise;
        self
    }

    pub fn manifest(&self) -> &DatasetManifest {
        &self.manifest
    }

    pub fn frames(&self) -> usize {
        frame_count(self.manifest.target_samples).unwrap_or(0)
    }

    /// Epoch schedule: every known-class file, a resampled slice of the unknown
    /// class and generated silence, shuffled by `epoch_seed`.
    pub fn plan(&self, split: Split, epoch_seed: u64) -> Result<SplitPlan> {
        let m = &self.manifest;
        let (fu, fs) = (self.unknown_frac, self.silence_frac);
        if fu < 0.0 || fs < 0.0 || fu + fs >= 1.0 {
            return Err(Error::InvalidArgument(format!(
                "unknown ({fu}) and silence ({fs}) fractions must be nonnegative and sum below 1"
            )));
        }
        let file = |e: &super::Entry| Example::File {
            path: e.path.clone(),
            label: e.label,
        };
        let mut examples: Vec<Example> = m
            .split(split)
            .filter(|e| Some(e.label) != m.unknown_label)
            .map(file)
            .collect();
        let known = examples.len();
        let total = (known as f64 / (1.0 - fu - fs)).round();
        if let Some(unknown) = m.unknown_label {
            let mut pool: Vec<Example> = m.split(split).filter(|e| e.label == unknown).map(file).collect();
            pool.shuffle(&mut rng(mix_seed(epoch_seed, "unknown")));
            let n = ((fu * total).round() as usize).min(pool.len());
            examples.extend(pool.into_iter().take(n));
        }
        if let Some(silence) = m.silence_label {
            let n = (fs * total).round() as usize;
            if n > 0 && self.background.is_empty() {
                return Err(Error::SilenceUnavailable(m.target_samples));
            }
            examples.extend((0..n).map(|i| Example::Silence {
                label: silence,
                seed: mix_seed(epoch_seed, &format!("silence{i}")),
            }));
        }
        if examples.is_empty() {
            return Err(Error::EmptySplit(split.to_string()));
        }
        examples.shuffle(&mut rng(epoch_seed));
        Ok(SplitPlan { split, examples })
    }

    /// Waveform of one example at the manifest's clip length, noise included.
    pub fn clip(&self, ex: &Example) -> Result<AudioClip> {
        let target = self.manifest.target_samples;
        let clean = match ex {
            Example::File { path, .. } => fix_length(&load_wav(path)?, target)?,
            Example::Silence { seed, .. } => self.background.sample(target, *seed)?,
        };
        // generated silence is background noise already and has no signal
        // power to measure an SNR against, so only recordings get noise
        match (&self.noise, ex) {
            (Some(spec), Example::File { path, .. }) => {
                let noise = colored_noise(target, spec.kind.alpha(), mix_seed(spec.seed, &path.to_string_lossy()))?;
                mix_at_snr(&clean, &noise, spec.snr_db)
            }
            _ => Ok(clean),
        }
    }

    /// Flat `[40 * T]` log-Mel features of one example.
    pub fn features(&self, ex: &Example) -> Result<Arc<Vec<f32>>> {
        let cacheable = self.noise.is_none() && matches!(ex, Example::File { .. });
        if let (true, Some(cache), Example::File { path, .. }) = (cacheable, &self.cache, ex) {
            if let Some(hit) = cache.lock().expect("feature cache").get(path) {
                return Ok(hit.clone());
            }
        }
        let fm = self.extractor.extract(&self.clip(ex)?)?;
        let v = Arc::new(fm.values().to_vec());
        if let (true, Some(cache), Example::File { path, .. }) = (cacheable, &self.cache, ex) {
            cache.lock().expect("feature cache").insert(path.clone(), v.clone());
        }
        Ok(v)
    }

    /// Stacks examples into one batch; features are extracted in parallel, order is preserved.
    pub fn batch(&self, examples: &[Example]) -> Result<Batch> {
        let feats = examples
            .par_iter()
            .map(|ex| self.features(ex))
            .collect::<Result<Vec<_>>>()?;
        let mut data = Vec::with_capacity(feats.iter().map(|f| f.len()).sum());
        for f in &feats {
            data.extend_from_slice(f);
        }
        Ok(Batch {
            features: Tensor::from_vec(&[examples.len(), 1, N_MELS, self.frames()], data)?,
            labels: examples.iter().map(Example::label).collect(),
        })
    }

    /// Deterministic batch sequence for one epoch; the final short batch is kept.
    pub fn batches(&self, split: Split, batch_size: usize, epoch_seed: u64) -> Result<Batches<'_>> {
        if batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be at least 1".into()));
        }
        Ok(Batches {
            loader: self,
            plan: self.plan(split, epoch_seed)?,
            batch_size,
            pos: 0,
        })
    }
}

pub struct Batches<'a> {
    loader: &'a Loader,
    plan: SplitPlan,
    batch_size: usize,
    pos: usize,
}

impl Batches<'_> {
    pub fn plan(&self) -> &SplitPlan {
        &self.plan
    }
}

impl Iterator for Batches<'_> {
    type Item = Result<Batch>;

    fn next(&mut self) -> Option<Self::Item> {
        let ex = &self.plan.examples;
        if self.pos >= ex.len() {
            return None;
        }
        let end = (self.pos + self.batch_size).min(ex.len());
        let chunk = &ex[self.pos..end];
        self.pos = end;
        Some(self.loader.batch(chunk))
    }
}
