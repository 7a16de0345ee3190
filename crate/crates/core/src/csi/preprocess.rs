//! Outlier clipping and per-feature standardisation.
//!
//! Each feature (element position within a sample) is clipped to
//! `median ± mad_k · 1.4826 · MAD` and then z-scored. All statistics come
//! from a reference dataset, normally the training split, so the same
//! transform can be applied to held-out data.

use serde::{Deserialize, Serialize};

use super::LabeledDataset;
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Scale factor making the MAD a consistent estimator of a normal σ.
const MAD_TO_SIGMA: f64 = 1.4826;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PreprocessConfig {
    pub mad_k: f64,
    pub eps_std: f64,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        PreprocessConfig {
            mad_k: 5.0,
            eps_std: 1e-8,
        }
    }
}

impl PreprocessConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.mad_k > 0.0) || !(self.eps_std > 0.0) {
            return Err(Error::Config(format!(
                "preprocess needs mad_k > 0 and eps_std > 0, got {} / {}",
                self.mad_k, self.eps_std
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FeatureStats {
    pub median: f64,
    pub mad: f64,
    pub lo: f64,
    pub hi: f64,
    /// Mean and population standard deviation of the clipped reference values.
    pub mean: f64,
    pub std: f64,
}

impl FeatureStats {
    pub fn clip(&self, v: f64) -> f64 {
        v.clamp(self.lo, self.hi)
    }
}

/// Fitted per-feature transform.
#[derive(Clone, Debug)]
pub struct Preprocessor {
    pub config: PreprocessConfig,
    pub features: Vec<FeatureStats>,
}

fn median(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2]
    } else {
        0.5 * (sorted[n / 2 - 1] + sorted[n / 2])
    }
}

impl Preprocessor {
    pub fn fit<T: Scalar>(stats_from: &LabeledDataset<T>, config: PreprocessConfig) -> Result<Self> {
        config.validate()?;
        let d = stats_from.feature_len();
        let n = stats_from.len();
        let data = stats_from.samples().data();
        let mut column = vec![0.0f64; n];
        let mut features = Vec::with_capacity(d);
        for j in 0..d {
            for (i, v) in column.iter_mut().enumerate() {
                *v = data[i * d + j].as_f64();
            }
            column.sort_by(f64::total_cmp);
            let med = median(&column);
            let mut dev: Vec<f64> = column.iter().map(|v| (v - med).abs()).collect();
            dev.sort_by(f64::total_cmp);
            let mad = median(&dev);
            // A zero MAD would collapse the clip window onto the median.
            let (lo, hi) = if mad > 0.0 {
                let half = config.mad_k * MAD_TO_SIGMA * mad;
                (med - half, med + half)
            } else {
                (f64::NEG_INFINITY, f64::INFINITY)
            };
            let clipped = column.iter().map(|v| v.clamp(lo, hi));
            let mean = clipped.clone().sum::<f64>() / n as f64;
            let var = clipped.map(|v| (v - mean) * (v - mean)).sum::<f64>() / n as f64;
            features.push(FeatureStats {
                median: med,
                mad,
                lo,
                hi,
                mean,
                std: var.sqrt(),
            });
        }
        Ok(Preprocessor { config, features })
    }

    pub fn transform_value(&self, j: usize, v: f64) -> f64 {
        let f = &self.features[j];
        if f.std < self.config.eps_std {
            0.0
        } else {
            (f.clip(v) - f.mean) / f.std
        }
    }

    pub fn apply<T: Scalar>(&self, ds: &LabeledDataset<T>) -> Result<LabeledDataset<T>> {
        let d = self.features.len();
        if ds.feature_len() != d {
            return Err(Error::ShapeMismatch {
                op: "preprocess",
                lhs: vec![d],
                rhs: ds.sample_shape().to_vec(),
            });
        }
        let data: Vec<T> = ds
            .samples()
            .data()
            .iter()
            .enumerate()
            .map(|(k, &v)| T::of(self.transform_value(k % d, v.as_f64())))
            .collect();
        LabeledDataset::new(
            Tensor::new(ds.samples().shape().to_vec(), data)?,
            ds.labels().to_vec(),
            ds.manifest().clone(),
        )
    }
}

/// Clips and standardises `ds` with statistics computed on `stats_from`.
pub fn preprocess<T: Scalar>(
    ds: &LabeledDataset<T>,
    cfg: &PreprocessConfig,
    stats_from: &LabeledDataset<T>,
) -> Result<LabeledDataset<T>> {
    if ds.sample_shape() != stats_from.sample_shape() {
        return Err(Error::ShapeMismatch {
            op: "preprocess",
            lhs: stats_from.sample_shape().to_vec(),
            rhs: ds.sample_shape().to_vec(),
        });
    }
    Preprocessor::fit(stats_from, *cfg)?.apply(ds)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csi::Manifest;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use rand_distr::{Distribution, Normal};

    fn gaussian_ds(n: usize, d: usize, seed: u64) -> LabeledDataset<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let dist = Normal::new(3.0, 2.0).unwrap();
        let data: Vec<f64> = (0..n * d).map(|_| dist.sample(&mut rng)).collect();
        LabeledDataset::new(
            Tensor::new(vec![n, d], data).unwrap(),
            (0..n).map(|i| i % 2).collect(),
            Manifest::new(2, vec![d], "train", "test"),
        )
        .unwrap()
    }

    fn column(ds: &LabeledDataset<f64>, j: usize) -> Vec<f64> {
        let d = ds.feature_len();
        ds.samples().data().iter().skip(j).step_by(d).copied().collect()
    }

    #[test]
    fn standardises_its_own_stats_source() {
        let ds = gaussian_ds(400, 5, 1);
        let out = preprocess(&ds, &PreprocessConfig::default(), &ds).unwrap();
        for j in 0..5 {
            let c = column(&out, j);
            let mean = c.iter().sum::<f64>() / c.len() as f64;
            let std = (c.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / c.len() as f64).sqrt();
            assert!(mean.abs() < 1e-6, "{mean}");
            assert!((std - 1.0).abs() < 1e-3, "{std}");
        }
    }

    #[test]
    fn outlier_is_clipped_to_ceiling() {
        // Column 0: values 0..=20 (median 10, MAD 5) plus one injected outlier.
        let mut vals: Vec<f64> = (0..=20).map(f64::from).collect();
        let median = 10.0;
        let mad = 5.0;
        vals.push(median + 1000.0 * mad);
        // hand check of the fixture's robust statistics with the outlier present
        let mut sorted = vals.clone();
        sorted.sort_by(f64::total_cmp);
        assert_eq!(sorted.len(), 22);
        let med = 0.5 * (sorted[10] + sorted[11]);
        assert_eq!(med, 10.5);
        let mut dev: Vec<f64> = sorted.iter().map(|v| (v - med).abs()).collect();
        dev.sort_by(f64::total_cmp);
        let mad_fixture = 0.5 * (dev[10] + dev[11]);
        assert_eq!(mad_fixture, 5.5);
        let ceiling = med + 5.0 * 1.4826 * mad_fixture;

        let n = vals.len();
        let ds = LabeledDataset::new(
            Tensor::new(vec![n, 1], vals).unwrap(),
            vec![0; n],
            Manifest::new(2, vec![1], "train", "test"),
        )
        .unwrap();
        let pre = Preprocessor::fit(&ds, PreprocessConfig { mad_k: 5.0, eps_std: 1e-8 }).unwrap();
        let f = pre.features[0];
        assert!((f.hi - ceiling).abs() < 1e-12);
        assert_eq!(f.clip(ds.sample(n - 1)[0].as_f64()), ceiling);
        let out = pre.apply(&ds).unwrap();
        let expected = (ceiling - f.mean) / f.std;
        assert!((out.sample(n - 1)[0] - expected).abs() < 1e-12);
    }

    #[test]
    fn constant_feature_maps_to_zero() {
        let ds = LabeledDataset::new(
            Tensor::from_f64(vec![4, 2], &[7., 1., 7., 2., 7., 3., 7., 4.]).unwrap(),
            vec![0, 1, 0, 1],
            Manifest::new(2, vec![2], "train", "t"),
        )
        .unwrap();
        let out = preprocess(&ds, &PreprocessConfig::default(), &ds).unwrap();
        assert!(column(&out, 0).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn reapplying_barely_moves_values() {
        let ds = gaussian_ds(500, 4, 9);
        let cfg = PreprocessConfig::default();
        let once = preprocess(&ds, &cfg, &ds).unwrap();
        let twice = preprocess(&once, &cfg, &once).unwrap();
        let max = once
            .samples()
            .data()
            .iter()
            .zip(twice.samples().data())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(max < 0.1, "{max}");
    }

    #[test]
    fn rejects_invalid_config_and_shape() {
        let ds = gaussian_ds(10, 3, 0);
        let bad = PreprocessConfig { mad_k: 0.0, eps_std: 1e-8 };
        assert!(preprocess(&ds, &bad, &ds).is_err());
        let other = gaussian_ds(10, 4, 0);
        assert!(preprocess(&other, &PreprocessConfig::default(), &ds).is_err());
    }
}
