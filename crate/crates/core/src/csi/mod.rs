//! Labelled CSI datasets: container, pack file format, preprocessing,
//! stratified splitting and a multipath CSI generator.

mod pack;
mod preprocess;
mod synth;

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

pub use pack::{decode_pack, encode_pack, load_pack, save_pack, PACK_MAGIC, PACK_VERSION};
pub use preprocess::{preprocess, FeatureStats, PreprocessConfig, Preprocessor};
pub use synth::{synth_csi, MultipathConfig, PathMotion, SPEED_OF_LIGHT};

use crate::error::{Error, Result};
use crate::rng::rng_from;
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

/// Dataset metadata carried alongside the samples.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub class_count: usize,
    pub sample_shape: Vec<usize>,
    pub split: String,
    pub provenance: String,
    /// Free-form producer metadata (distillation settings, digests, ...).
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub extra: BTreeMap<String, serde_json::Value>,
}

impl Manifest {
    pub fn new(class_count: usize, sample_shape: Vec<usize>, split: &str, provenance: &str) -> Self {
        Manifest {
            class_count,
            sample_shape,
            split: split.into(),
            provenance: provenance.into(),
            extra: BTreeMap::new(),
        }
    }
}

/// Immutable samples `[N, ..sample_shape]` with integer labels in `[0, C)`.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledDataset<T> {
    samples: Tensor<T>,
    labels: Vec<usize>,
    manifest: Manifest,
}

impl<T: Scalar> LabeledDataset<T> {
    pub fn new(samples: Tensor<T>, labels: Vec<usize>, manifest: Manifest) -> Result<Self> {
        let shape = samples.shape();
        if shape.is_empty() || shape[1..] != manifest.sample_shape[..] {
            return Err(Error::ShapeMismatch {
                op: "dataset",
                lhs: manifest.sample_shape.clone(),
                rhs: shape.to_vec(),
            });
        }
        if labels.len() != shape[0] {
            return Err(Error::InvalidArgument(format!(
                "{} labels for {} samples",
                labels.len(),
                shape[0]
            )));
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= manifest.class_count) {
            return Err(Error::LabelOutOfRange {
                label,
                classes: manifest.class_count,
            });
        }
        if !samples.all_finite() {
            return Err(Error::NonFinite {
                what: "sample value",
                context: "dataset construction".into(),
            });
        }
        Ok(LabeledDataset {
            samples,
            labels,
            manifest,
        })
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn samples(&self) -> &Tensor<T> {
        &self.samples
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn manifest(&self) -> &Manifest {
        &self.manifest
    }

    pub fn class_count(&self) -> usize {
        self.manifest.class_count
    }

    pub fn sample_shape(&self) -> &[usize] {
        &self.manifest.sample_shape
    }

    pub fn feature_len(&self) -> usize {
        numel(&self.manifest.sample_shape)
    }

    pub fn sample(&self, i: usize) -> &[T] {
        self.samples.row(i)
    }

    /// Returns a copy with a different manifest (same samples and labels).
    pub fn with_manifest(&self, manifest: Manifest) -> Result<Self> {
        LabeledDataset::new(self.samples.clone(), self.labels.clone(), manifest)
    }

    /// Indices of every sample of class `c`, ascending.
    pub fn class_indices(&self, c: usize) -> Vec<usize> {
        (0..self.len()).filter(|&i| self.labels[i] == c).collect()
    }

    pub fn class_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.class_count()];
        for &l in &self.labels {
            counts[l] += 1;
        }
        counts
    }

    /// The samples at `indices`, in that order.
    pub fn subset(&self, indices: &[usize], split: &str) -> Result<Self> {
        if indices.is_empty() {
            return Err(Error::InvalidArgument("empty subset".into()));
        }
        if let Some(&i) = indices.iter().find(|&&i| i >= self.len()) {
            return Err(Error::InvalidArgument(format!(
                "subset index {i} out of range for {} samples",
                self.len()
            )));
        }
        let mut manifest = self.manifest.clone();
        manifest.split = split.into();
        Ok(LabeledDataset {
            samples: self.samples.select_rows(indices),
            labels: indices.iter().map(|&i| self.labels[i]).collect(),
            manifest,
        })
    }

    pub fn cast<U: Scalar>(&self) -> LabeledDataset<U> {
        LabeledDataset {
            samples: self.samples.cast(),
            labels: self.labels.clone(),
            manifest: self.manifest.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ClassStats<T> {
    pub count: usize,
    /// Mean sample; `None` for classes without samples.
    pub mean: Option<Tensor<T>>,
}

/// Per-class sample counts and feature means.
pub fn class_stats<T: Scalar>(ds: &LabeledDataset<T>) -> Vec<ClassStats<T>> {
    let d = ds.feature_len();
    let mut sums = vec![vec![0.0f64; d]; ds.class_count()];
    let mut counts = vec![0usize; ds.class_count()];
    for i in 0..ds.len() {
        let c = ds.labels[i];
        counts[c] += 1;
        for (s, &v) in sums[c].iter_mut().zip(ds.sample(i)) {
            *s += v.as_f64();
        }
    }
    sums.into_iter()
        .zip(counts)
        .map(|(sum, count)| ClassStats {
            count,
            mean: (count > 0).then(|| {
                Tensor::from_parts(
                    ds.sample_shape().to_vec(),
                    sum.iter().map(|&s| T::of(s / count as f64)).collect(),
                )
            }),
        })
        .collect()
}

/// Stratified train/test split, deterministic in `seed`.
///
/// Each class contributes `round(train_fraction · n_c)` samples to the train
/// side, clamped so both sides receive at least one sample.
pub fn split<T: Scalar>(
    ds: &LabeledDataset<T>,
    train_fraction: f64,
    seed: u64,
) -> Result<(LabeledDataset<T>, LabeledDataset<T>)> {
    if !(train_fraction > 0.0 && train_fraction < 1.0) {
        return Err(Error::InvalidArgument(format!(
            "train fraction {train_fraction} outside (0, 1)"
        )));
    }
    let mut rng = rng_from(seed);
    let mut train = Vec::new();
    let mut test = Vec::new();
    for c in 0..ds.class_count() {
        let mut idx = ds.class_indices(c);
        if idx.is_empty() {
            continue;
        }
        if idx.len() < 2 {
            return Err(Error::ClassTooSmall {
                class: c,
                available: idx.len(),
                required: 2,
            });
        }
        idx.shuffle(&mut rng);
        let n_train = ((train_fraction * idx.len() as f64).round() as usize).clamp(1, idx.len() - 1);
        train.extend_from_slice(&idx[..n_train]);
        test.extend_from_slice(&idx[n_train..]);
    }
    train.sort_unstable();
    test.sort_unstable();
    Ok((ds.subset(&train, "train")?, ds.subset(&test, "test")?))
}
