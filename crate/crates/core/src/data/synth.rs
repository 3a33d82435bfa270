//! Small generated corpora for demos and end-to-end tests.

use std::path::Path;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::dsp::{write_wav, AudioClip, SAMPLE_RATE};
use crate::error::Result;
use crate::nn::{mix_seed, rng};

/// One clip of class `class`: a short two-tone burst whose pitch pair
/// identifies the class, at a random onset and level, over faint white noise.
pub fn synthetic_clip(class: usize, samples: usize, seed: u64) -> Result<AudioClip> {
    let mut r = rng(seed);
    let f1 = 300.0 + 170.0 * class as f64;
    let f2 = f1 * (1.5 + 0.1 * (class % 3) as f64);
    let burst = samples / 2;
    let onset = r.random_range(0..=samples - burst);
    let amp = r.random_range(0.2..0.6);
    let noise = r.random_range(0.002..0.02);
    let sr = SAMPLE_RATE as f64;
    let out = (0..samples)
        .map(|i| {
            let mut v = noise * r.sample::<f64, _>(StandardNormal);
            if (onset..onset + burst).contains(&i) {
                let t = (i - onset) as f64;
                let env = (std::f64::consts::PI * t / burst as f64).sin();
                let ph = 2.0 * std::f64::consts::PI * t / sr;
                v += amp * env * (0.7 * (f1 * ph).sin() + 0.3 * (f2 * ph).sin());
            }
            v as f32
        })
        .collect();
    AudioClip::from_samples(out)
}

/// Writes `per_class` clips into `root/<class>/<class>_<i>.wav` for every class name.
pub fn write_synthetic_corpus(
    root: &Path,
    classes: &[&str],
    per_class: usize,
    samples: usize,
    seed: u64,
) -> Result<()> {
    for (c, name) in classes.iter().enumerate() {
        let dir = root.join(name);
        std::fs::create_dir_all(&dir).map_err(|e| crate::Error::io(&dir, e))?;
        for i in 0..per_class {
            let clip = synthetic_clip(c, samples, mix_seed(seed, &format!("{name}/{i}")))?;
            write_wav(dir.join(format!("{name}_{i}.wav")), &clip)?;
        }
    }
    Ok(())
}
