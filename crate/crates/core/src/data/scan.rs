use std::collections::{BTreeMap, HashSet};
use std::fs;
use std::path::{Path, PathBuf};

use super::{DatasetManifest, Entry, Split, GSC_KEYWORDS, SILENCE_LABEL, UNKNOWN_LABEL};
use crate::dsp::GSC_SAMPLES;
use crate::error::{Error, Result};
use crate::nn::mix_seed;

pub const BACKGROUND_DIR: &str = "_background_noise_";

fn sorted_dir(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for e in fs::read_dir(dir).map_err(|e| Error::io(dir, e))? {
        out.push(e.map_err(|e| Error::io(dir, e))?.path());
    }
    out.sort();
    Ok(out)
}

fn is_wav(p: &Path) -> bool {
    p.is_file() && p.extension().is_some_and(|x| x.eq_ignore_ascii_case("wav"))
}

fn wavs_in(dir: &Path) -> Result<Vec<PathBuf>> {
    Ok(sorted_dir(dir)?.into_iter().filter(|p| is_wav(p)).collect())
}

fn read_list(path: &Path) -> Result<HashSet<String>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(text
        .lines()
        .map(|l| l.trim().replace('\\', "/"))
        .filter(|l| !l.is_empty())
        .collect())
}

fn background(root: &Path, dir: &str) -> Result<Vec<PathBuf>> {
    let d = root.join(dir);
    if d.is_dir() {
        wavs_in(&d)
    } else {
        Ok(Vec::new())
    }
}

/// Scans a speech-commands tree with the default background folder.
pub fn scan_gsc(root: &Path, val_list: &Path, test_list: &Path, keywords: &[&str]) -> Result<DatasetManifest> {
    scan_gsc_with(root, val_list, test_list, keywords, BACKGROUND_DIR)
}

/// Scans a speech-commands tree: one folder per word, validation/testing
/// lists of `word/file.wav` paths, keywords first, then unknown and silence.
pub fn scan_gsc_with(
    root: &Path,
    val_list: &Path,
    test_list: &Path,
    keywords: &[&str],
    background_dir: &str,
) -> Result<DatasetManifest> {
    let keywords: Vec<&str> = if keywords.is_empty() {
        GSC_KEYWORDS.to_vec()
    } else {
        keywords.to_vec()
    };
    for k in &keywords {
        if !root.join(k).is_dir() {
            return Err(Error::DatasetLayout(format!(
                "keyword folder `{k}` missing under {}",
                root.display()
            )));
        }
    }
    let val = read_list(val_list)?;
    let test = read_list(test_list)?;
    let mut conflicts: Vec<&String> = val.intersection(&test).collect();
    conflicts.sort();
    if let Some(c) = conflicts.first() {
        return Err(Error::SplitConflict(c.to_string()));
    }

    let unknown = keywords.len();
    let mut entries = Vec::new();
    for dir in sorted_dir(root)?.into_iter().filter(|p| p.is_dir()) {
        let word = dir.file_name().and_then(|n| n.to_str()).unwrap_or_default().to_string();
        if word == background_dir || word.starts_with('.') {
            continue;
        }
        let label = keywords.iter().position(|k| *k == word).unwrap_or(unknown);
        for path in wavs_in(&dir)? {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let rel = format!("{word}/{name}");
            let split = if val.contains(&rel) {
                Split::Val
            } else if test.contains(&rel) {
                Split::Test
            } else {
                Split::Train
            };
            entries.push(Entry { path, label, split });
        }
    }
    let mut labels: Vec<String> = keywords.iter().map(|s| s.to_string()).collect();
    labels.push(UNKNOWN_LABEL.into());
    labels.push(SILENCE_LABEL.into());
    Ok(DatasetManifest {
        entries,
        background_paths: background(root, background_dir)?,
        target_samples: GSC_SAMPLES,
        unknown_label: Some(unknown),
        silence_label: Some(unknown + 1),
        labels,
        warnings: Vec::new(),
    })
}

/// 80/10/10 split decided by a hash of the file name alone.
pub fn split_for_name(name: &str) -> Split {
    match mix_seed(0, name) % 100 {
        0..=79 => Split::Train,
        80..=89 => Split::Val,
        _ => Split::Test,
    }
}

/// Scans a one-folder-per-class corpus; label ids follow `class_names`.
pub fn scan_folder_corpus(root: &Path, class_names: &[&str], target_samples: usize) -> Result<DatasetManifest> {
    if class_names.len() < 2 {
        return Err(Error::DatasetLayout("a corpus needs at least two classes".into()));
    }
    let mut seen = BTreeMap::new();
    let mut entries = Vec::new();
    let mut warnings = Vec::new();
    for (label, class) in class_names.iter().enumerate() {
        if seen.insert(*class, label).is_some() {
            return Err(Error::DatasetLayout(format!("class `{class}` listed twice")));
        }
        let dir = root.join(class);
        if !dir.is_dir() {
            return Err(Error::DatasetLayout(format!(
                "class folder `{class}` missing under {}",
                root.display()
            )));
        }
        let files = wavs_in(&dir)?;
        if files.is_empty() {
            warnings.push(format!("class folder `{class}` contains no WAV files"));
        }
        for path in files {
            let name = path.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let split = split_for_name(name);
            entries.push(Entry { path, label, split });
        }
    }
    Ok(DatasetManifest {
        entries,
        labels: class_names.iter().map(|s| s.to_string()).collect(),
        background_paths: background(root, BACKGROUND_DIR)?,
        target_samples,
        unknown_label: None,
        silence_label: None,
        warnings,
    })
}
