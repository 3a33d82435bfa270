use std::fmt;
use std::path::Path;
use std::str::FromStr;

use bcsenet::data::{
    scan_folder_corpus, scan_gsc, DatasetManifest, BACKGROUND_DIR, GSC_KEYWORDS, SILENCE_LABEL, UNKNOWN_LABEL,
};
use bcsenet::dsp::{HOP, WINDOW};
use bcsenet::model::ModelConfig;
use bcsenet::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    /// ten keywords plus unknown and silence
    Gsc12,
    /// chosen keywords of the speech-commands layout, nothing else
    GscKeywords,
    /// one folder per class
    Folder,
}

impl fmt::Display for Task {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Task::Gsc12 => "gsc12",
            Task::GscKeywords => "gsc-keywords",
            Task::Folder => "folder",
        })
    }
}

impl FromStr for Task {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "gsc12" => Ok(Task::Gsc12),
            "gsc-keywords" => Ok(Task::GscKeywords),
            "folder" => Ok(Task::Folder),
            _ => Err(format!("unknown task {s:?}; expected gsc12, gsc-keywords or folder")),
        }
    }
}

fn gsc_lists(root: &Path) -> (std::path::PathBuf, std::path::PathBuf) {
    (root.join("validation_list.txt"), root.join("testing_list.txt"))
}

/// Builds the manifest for `task`. `names` are keywords or class folders; empty means the default set.
pub fn open_dataset(root: &Path, task: Task, names: &[&str]) -> Result<DatasetManifest> {
    let (val, test) = gsc_lists(root);
    match task {
        Task::Gsc12 => {
            if !names.is_empty() {
                return Err(Error::InvalidArgument("gsc12 uses the fixed ten keywords".into()));
            }
            scan_gsc(root, &val, &test, &GSC_KEYWORDS)
        }
        Task::GscKeywords => {
            if names.is_empty() {
                return Err(Error::InvalidArgument("gsc-keywords needs --keywords".into()));
            }
            Ok(scan_gsc(root, &val, &test, names)?.keywords_only())
        }
        Task::Folder => {
            let found;
            let names = if names.is_empty() {
                found = class_folders(root)?;
                found.iter().map(String::as_str).collect()
            } else {
                names.to_vec()
            };
            scan_folder_corpus(root, &names, bcsenet::dsp::GSC_SAMPLES)
        }
    }
}

fn class_folders(root: &Path) -> Result<Vec<String>> {
    let mut names = Vec::new();
    for entry in std::fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let path = entry.map_err(|e| Error::io(root, e))?.path();
        let Some(name) = path.file_name().and_then(|n| n.to_str()) else {
            continue;
        };
        if path.is_dir() && name != BACKGROUND_DIR && !name.starts_with('.') {
            names.push(name.to_string());
        }
    }
    names.sort();
    Ok(names)
}

/// Rebuilds the dataset a checkpoint was trained on from its label names.
pub fn for_model(root: &Path, task: Option<Task>, cfg: &ModelConfig) -> Result<DatasetManifest> {
    let labels: Vec<&str> = cfg.class_names.iter().map(String::as_str).collect();
    let keywords: Vec<&str> = labels
        .iter()
        .copied()
        .filter(|l| *l != UNKNOWN_LABEL && *l != SILENCE_LABEL)
        .collect();
    let gsc_layout = gsc_lists(root).0.is_file();
    let task = task.unwrap_or(if labels.contains(&UNKNOWN_LABEL) {
        Task::Gsc12
    } else if gsc_layout {
        Task::GscKeywords
    } else {
        Task::Folder
    });
    let manifest = match task {
        Task::Gsc12 => {
            let (val, test) = gsc_lists(root);
            scan_gsc(root, &val, &test, &keywords)?
        }
        Task::GscKeywords => open_dataset(root, task, &keywords)?,
        Task::Folder => open_dataset(root, task, &labels)?,
    };
    if manifest.labels != cfg.class_names {
        return Err(Error::InvalidConfig(format!(
            "dataset labels {:?} differ from the checkpoint's {:?}",
            manifest.labels, cfg.class_names
        )));
    }
    let samples = (cfg.frames - 1) * HOP + WINDOW;
    if samples != manifest.target_samples {
        return Err(Error::InvalidConfig(format!(
            "checkpoint expects {samples}-sample clips, dataset gives {}",
            manifest.target_samples
        )));
    }
    Ok(manifest)
}
