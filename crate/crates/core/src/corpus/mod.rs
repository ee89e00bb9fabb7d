//! Label set, annotation schema, class-folder datasets, splitting, class
//! statistics and the synthetic corpus generator.

mod annotation;
mod labels;
mod synth;

pub use annotation::{
    extract_characters, parse_annotation, sha256_hex, CharBox, SignAnnotation,
    ANNOTATION_SUFFIX, ANNOTATION_VERSION,
};
pub use labels::{LabelEntry, LabelSet};
pub use synth::{generate_synthetic, prototypes, Augment};

use crate::imaging::{self, ImageError, ImageFormat};
use crate::numerics::{shuffle_in_place, Tensor};
use rayon::prelude::*;
use std::path::{Path, PathBuf};

#[derive(Debug, thiserror::Error)]
pub enum CorpusError {
    #[error("annotation parse error: {0}")]
    Parse(String),
    #[error("unknown label {0:?}")]
    UnknownLabel(String),
    #[error("box {index}: bad geometry: {reason}")]
    BadGeometry { index: usize, reason: String },
    #[error("box {index}: {source}")]
    BoxOutOfBounds {
        index: usize,
        #[source]
        source: ImageError,
    },
    #[error("{path}: {source}")]
    Image {
        path: PathBuf,
        #[source]
        source: ImageError,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("train fraction {0} must lie strictly between 0 and 1")]
    InvalidFraction(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct CharacterSample {
    /// `[1, 50, 50]`, values in `[0, 1]`.
    pub tensor: Tensor,
    pub class_index: usize,
    /// File and box index, file path, or `"synthetic"`.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<CharacterSample>,
    pub labels: LabelSet,
}

impl Dataset {
    pub fn new(labels: LabelSet) -> Self {
        Self {
            samples: Vec::new(),
            labels,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.labels.len()];
        for s in &self.samples {
            counts[s.class_index] += 1;
        }
        counts
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CorpusError + '_ {
    move |source| CorpusError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn sorted_entries(dir: &Path) -> Result<Vec<std::fs::DirEntry>, CorpusError> {
    let mut entries = std::fs::read_dir(dir)
        .map_err(io_err(dir))?
        .collect::<Result<Vec<_>, _>>()
        .map_err(io_err(dir))?;
    entries.sort_by_key(|e| e.file_name());
    Ok(entries)
}

/// Load a file and preprocess it into a `[1, 50, 50]` sample tensor.
pub fn load_sample_file(path: &Path) -> Result<Tensor, CorpusError> {
    let bytes = std::fs::read(path).map_err(io_err(path))?;
    let format = ImageFormat::from_path(path).ok_or_else(|| CorpusError::Image {
        path: path.to_path_buf(),
        source: ImageError::UnsupportedFeature("unknown extension".into()),
    })?;
    imaging::decode_image(&bytes, format)
        .and_then(|img| imaging::preprocess_character(&img))
        .map_err(|source| CorpusError::Image {
            path: path.to_path_buf(),
            source,
        })
}

/// Load `<root>/<ascii_name>/*.png|*.pgm`, ordered by folder then file name.
pub fn load_class_folders(root: &Path, labels: &LabelSet) -> Result<Dataset, CorpusError> {
    let mut files: Vec<(usize, PathBuf)> = Vec::new();
    for entry in sorted_entries(root)? {
        let path = entry.path();
        if !path.is_dir() {
            continue;
        }
        let name = entry.file_name().to_string_lossy().into_owned();
        let class_index = labels
            .index_of(&name)
            .ok_or(CorpusError::UnknownLabel(name))?;
        for file in sorted_entries(&path)? {
            let p = file.path();
            if p.is_file() && ImageFormat::from_path(&p).is_some() {
                files.push((class_index, p));
            }
        }
    }
    let samples = files
        .into_par_iter()
        .map(|(class_index, path)| {
            let tensor = load_sample_file(&path)?;
            Ok(CharacterSample {
                tensor,
                class_index,
                source: path.display().to_string(),
            })
        })
        .collect::<Result<Vec<_>, CorpusError>>()?;
    Ok(Dataset {
        samples,
        labels: labels.clone(),
    })
}

/// Per-class train count: `ceil(n * fraction)`, with a small slack so that
/// products such as `10 * 0.8` do not round up past the exact value.
pub fn train_count(n: usize, fraction: f64) -> usize {
    ((n as f64 * fraction - 1e-9).ceil().max(0.0) as usize).min(n)
}

/// Per-class split: each class is shuffled with `seed ^ class_index` and the
/// first `ceil(n_c * fraction)` samples go to train.
pub fn stratified_split(
    d: &Dataset,
    train_fraction: f64,
    seed: u64,
) -> Result<(Dataset, Dataset), CorpusError> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(CorpusError::InvalidFraction(train_fraction));
    }
    let mut by_class: Vec<Vec<usize>> = vec![Vec::new(); d.labels.len()];
    for (i, s) in d.samples.iter().enumerate() {
        by_class[s.class_index].push(i);
    }
    let mut train = Dataset::new(d.labels.clone());
    let mut test = Dataset::new(d.labels.clone());
    for (class_index, mut idx) in by_class.into_iter().enumerate() {
        shuffle_in_place(&mut idx, seed ^ class_index as u64);
        let k = train_count(idx.len(), train_fraction);
        train
            .samples
            .extend(idx[..k].iter().map(|&i| d.samples[i].clone()));
        test.samples
            .extend(idx[k..].iter().map(|&i| d.samples[i].clone()));
    }
    Ok((train, test))
}

#[derive(Debug, Clone, PartialEq)]
pub struct ClassStats {
    pub counts: Vec<usize>,
    pub total: usize,
    pub frequencies: Vec<f64>,
}

impl ClassStats {
    /// Class indices by descending count; ties keep the lower index first.
    pub fn ranked(&self) -> Vec<usize> {
        let mut order: Vec<usize> = (0..self.counts.len()).collect();
        order.sort_by(|&a, &b| self.counts[b].cmp(&self.counts[a]).then(a.cmp(&b)));
        order
    }

    pub fn top_k(&self, k: usize) -> Vec<usize> {
        let mut r = self.ranked();
        r.truncate(k);
        r
    }

    /// Sum of the `k` largest frequencies.
    pub fn topk_share(&self, k: usize) -> f64 {
        let top: usize = self.top_k(k).iter().map(|&i| self.counts[i]).sum();
        top as f64 / self.total as f64
    }
}

pub fn class_stats(d: &Dataset) -> Result<ClassStats, CorpusError> {
    stats_from_counts(d.class_counts())
}

pub fn stats_from_counts(counts: Vec<usize>) -> Result<ClassStats, CorpusError> {
    let total: usize = counts.iter().sum();
    if total == 0 {
        return Err(CorpusError::EmptyDataset);
    }
    let frequencies = counts.iter().map(|&c| c as f64 / total as f64).collect();
    Ok(ClassStats {
        counts,
        total,
        frequencies,
    })
}
