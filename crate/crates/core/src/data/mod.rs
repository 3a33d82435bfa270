//! Dataset manifests, noise sources and batching.

mod batch;
mod noise;
mod scan;
mod synth;

use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;

use crate::error::{Error, Result};

pub use batch::{Batch, Batches, Example, Loader, SplitPlan};
pub use noise::{colored_noise, mix_at_snr, noise_scale, sample_silence, BackgroundPool, NoiseKind, NoiseSpec};
pub use scan::{scan_folder_corpus, scan_gsc, scan_gsc_with, split_for_name, BACKGROUND_DIR};
pub use synth::{synthetic_clip, write_synthetic_corpus};

/// Labels of the 12-class speech-commands task, in label-id order.
pub const GSC_CLASSES: [&str; 12] = [
    "yes",
    "no",
    "up",
    "down",
    "left",
    "right",
    "on",
    "off",
    "stop",
    "go",
    "_unknown_",
    "_silence_",
];
/// The ten target words of the speech-commands task.
pub const GSC_KEYWORDS: [&str; 10] = ["yes", "no", "up", "down", "left", "right", "on", "off", "stop", "go"];
pub const UNKNOWN_LABEL: &str = "_unknown_";
pub const SILENCE_LABEL: &str = "_silence_";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" | "validation" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            _ => Err(Error::InvalidArgument(format!("unknown split {s:?}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Entry {
    pub path: PathBuf,
    pub label: usize,
    pub split: Split,
}

/// Resolved corpus: labeled files, label map and noise sources.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetManifest {
    pub entries: Vec<Entry>,
    /// class names in label-id order
    pub labels: Vec<String>,
    pub background_paths: Vec<PathBuf>,
    pub target_samples: usize,
    /// label whose examples are resampled each epoch, if any
    pub unknown_label: Option<usize>,
    /// label of generated silence examples, if any
    pub silence_label: Option<usize>,
    /// non-fatal problems found while scanning
    pub warnings: Vec<String>,
}

impl DatasetManifest {
    pub fn num_classes(&self) -> usize {
        self.labels.len()
    }

    pub fn label_id(&self, name: &str) -> Option<usize> {
        self.labels.iter().position(|l| l == name)
    }

    pub fn split(&self, split: Split) -> impl Iterator<Item = &Entry> {
        self.entries.iter().filter(move |e| e.split == split)
    }

    pub fn count(&self, split: Split) -> usize {
        self.split(split).count()
    }

    /// Keeps only the keyword classes: unknown-word files are dropped and
    /// neither unknown nor silence remains a class.
    pub fn keywords_only(&self) -> DatasetManifest {
        let extra: Vec<usize> = [self.unknown_label, self.silence_label].into_iter().flatten().collect();
        let keep: Vec<usize> = (0..self.labels.len()).filter(|l| !extra.contains(l)).collect();
        let remap = |l: usize| keep.iter().position(|&k| k == l);
        DatasetManifest {
            entries: self
                .entries
                .iter()
                .filter_map(|e| remap(e.label).map(|label| Entry { label, ..e.clone() }))
                .collect(),
            labels: keep.iter().map(|&l| self.labels[l].clone()).collect(),
            unknown_label: None,
            silence_label: None,
            ..self.clone()
        }
    }
}

#[cfg(test)]
mod tests;
