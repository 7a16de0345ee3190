//! Class-balanced coreset baselines: random, k-means, k-center and herding.
//!
//! Every selector works per class on the flattened sample values with
//! Euclidean distance and returns `spc` indices per class, in class order.

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::binio::write_atomic;
use crate::csi::{save_pack, LabeledDataset};
use crate::error::{Error, Result};
use crate::rng::{derive_seed, rng_from};
use crate::scalar::Scalar;

const KMEANS_MAX_ITERS: usize = 100;
const KMEANS_TOL: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoresetMethod {
    Random,
    Kmeans,
    Kcenter,
    Herding,
}

impl CoresetMethod {
    pub const ALL: [CoresetMethod; 4] = [
        CoresetMethod::Random,
        CoresetMethod::Kmeans,
        CoresetMethod::Kcenter,
        CoresetMethod::Herding,
    ];

    pub fn name(self) -> &'static str {
        match self {
            CoresetMethod::Random => "random",
            CoresetMethod::Kmeans => "kmeans",
            CoresetMethod::Kcenter => "kcenter",
            CoresetMethod::Herding => "herding",
        }
    }
}

impl fmt::Display for CoresetMethod {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for CoresetMethod {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown coreset method `{s}`")))
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CoresetResult {
    pub method: CoresetMethod,
    /// Indices into the source dataset, grouped by class.
    pub indices: Vec<usize>,
    pub spc: usize,
}

impl CoresetResult {
    pub fn subset<T: Scalar>(&self, ds: &LabeledDataset<T>) -> Result<LabeledDataset<T>> {
        let sub = ds.subset(&self.indices, "coreset")?;
        let mut m = sub.manifest().clone();
        m.provenance = format!("{} coreset", self.method);
        m.extra.insert("spc".into(), self.spc.into());
        m.extra.insert("method".into(), self.method.name().into());
        sub.with_manifest(m)
    }
}

/// Flattened sample values, one `f64` vector per sample.
pub fn feature_embed<T: Scalar>(ds: &LabeledDataset<T>) -> Vec<Vec<f64>> {
    (0..ds.len())
        .map(|i| ds.sample(i).iter().map(|v| v.as_f64()).collect())
        .collect()
}

pub fn sq_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn mean_of(points: &[Vec<f64>], members: impl Iterator<Item = usize>) -> Vec<f64> {
    let mut sum = vec![0.0; points[0].len()];
    let mut n = 0;
    for i in members {
        for (s, v) in sum.iter_mut().zip(&points[i]) {
            *s += v;
        }
        n += 1;
    }
    sum.iter_mut().for_each(|s| *s /= n as f64);
    sum
}

/// Position of the smallest key; the earliest position wins ties.
fn argmin_by(n: usize, mut key: impl FnMut(usize) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for i in 0..n {
        let k = key(i);
        if best.is_none_or(|(_, b)| k < b) {
            best = Some((i, k));
        }
    }
    best.map(|(i, _)| i)
}

/// Greedy farthest-first traversal starting at the point nearest the mean.
///
/// Returns positions into `points`.
pub fn kcenter_greedy(points: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = points.len();
    let mu = mean_of(points, 0..n);
    let first = argmin_by(n, |i| sq_dist(&points[i], &mu)).expect("non-empty class");
    let mut chosen = vec![first];
    let mut nearest: Vec<f64> = points.iter().map(|p| sq_dist(p, &points[first])).collect();
    while chosen.len() < k.min(n) {
        let next = argmin_by(n, |i| if chosen.contains(&i) { f64::INFINITY } else { -nearest[i] })
            .expect("unchosen point remains");
        chosen.push(next);
        for (d, p) in nearest.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[next]));
        }
    }
    chosen
}

/// Greedy mean matching. Returns positions into `points`.
pub fn herding_greedy(points: &[Vec<f64>], k: usize) -> Vec<usize> {
    let n = points.len();
    let dim = points[0].len();
    let mu = mean_of(points, 0..n);
    let mut chosen: Vec<usize> = Vec::with_capacity(k);
    let mut sum = vec![0.0; dim];
    while chosen.len() < k.min(n) {
        let m = (chosen.len() + 1) as f64;
        let next = argmin_by(n, |i| {
            if chosen.contains(&i) {
                return f64::INFINITY;
            }
            (0..dim)
                .map(|d| {
                    let e = mu[d] - (sum[d] + points[i][d]) / m;
                    e * e
                })
                .sum()
        })
        .expect("unchosen point remains");
        chosen.push(next);
        for (s, v) in sum.iter_mut().zip(&points[next]) {
            *s += v;
        }
    }
    chosen
}

/// Lloyd's algorithm with k-means++ seeding, then the nearest unused point
/// to each centroid. Returns positions into `points`.
pub fn kmeans_pick(points: &[Vec<f64>], k: usize, rng: &mut impl rand::Rng) -> Vec<usize> {
    let n = points.len();
    let k = k.min(n);
    let mut centroids: Vec<Vec<f64>> = vec![points[rng.gen_range(0..n)].clone()];
    let mut d2: Vec<f64> = points.iter().map(|p| sq_dist(p, &centroids[0])).collect();
    while centroids.len() < k {
        let total: f64 = d2.iter().sum();
        let pick = if total > 0.0 {
            let mut r = rng.gen::<f64>() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if r < d {
                    pick = i;
                    break;
                }
                r -= d;
            }
            pick
        } else {
            rng.gen_range(0..n)
        };
        centroids.push(points[pick].clone());
        for (d, p) in d2.iter_mut().zip(points) {
            *d = d.min(sq_dist(p, &points[pick]));
        }
    }
    let mut assign = vec![0usize; n];
    for _ in 0..KMEANS_MAX_ITERS {
        for (a, p) in assign.iter_mut().zip(points) {
            *a = argmin_by(k, |c| sq_dist(p, &centroids[c])).unwrap();
        }
        let mut shift: f64 = 0.0;
        for (c, centroid) in centroids.iter_mut().enumerate() {
            if !assign.contains(&c) {
                continue;
            }
            let next = mean_of(points, (0..n).filter(|&i| assign[i] == c));
            shift = shift.max(sq_dist(&next, centroid).sqrt());
            *centroid = next;
        }
        if shift < KMEANS_TOL {
            break;
        }
    }
    let mut used = vec![false; n];
    centroids
        .iter()
        .map(|c| {
            let i = argmin_by(n, |i| if used[i] { f64::INFINITY } else { sq_dist(&points[i], c) })
                .expect("unused point remains");
            used[i] = true;
            i
        })
        .collect()
}

/// Runs `method` on every class of `ds`.
pub fn select<T: Scalar>(ds: &LabeledDataset<T>, method: CoresetMethod, spc: usize, seed: u64) -> Result<CoresetResult> {
    if spc == 0 {
        return Err(Error::InvalidArgument("spc must be positive".into()));
    }
    let embed = feature_embed(ds);
    let mut indices = Vec::with_capacity(spc * ds.class_count());
    for c in 0..ds.class_count() {
        let idx = ds.class_indices(c);
        if idx.len() < spc {
            return Err(Error::ClassTooSmall {
                class: c,
                available: idx.len(),
                required: spc,
            });
        }
        let mut rng = rng_from(derive_seed(seed, method.name(), c as u64));
        let points: Vec<Vec<f64>> = idx.iter().map(|&i| embed[i].clone()).collect();
        let picked = match method {
            CoresetMethod::Random => {
                indices.extend(idx.choose_multiple(&mut rng, spc).copied());
                continue;
            }
            CoresetMethod::Kmeans => kmeans_pick(&points, spc, &mut rng),
            CoresetMethod::Kcenter => kcenter_greedy(&points, spc),
            CoresetMethod::Herding => herding_greedy(&points, spc),
        };
        indices.extend(picked.into_iter().map(|p| idx[p]));
    }
    Ok(CoresetResult { method, indices, spc })
}

pub fn random_select<T: Scalar>(ds: &LabeledDataset<T>, spc: usize, seed: u64) -> Result<CoresetResult> {
    select(ds, CoresetMethod::Random, spc, seed)
}

pub fn kmeans_select<T: Scalar>(ds: &LabeledDataset<T>, spc: usize, seed: u64) -> Result<CoresetResult> {
    select(ds, CoresetMethod::Kmeans, spc, seed)
}

pub fn kcenter_select<T: Scalar>(ds: &LabeledDataset<T>, spc: usize, seed: u64) -> Result<CoresetResult> {
    select(ds, CoresetMethod::Kcenter, spc, seed)
}

pub fn herding_select<T: Scalar>(ds: &LabeledDataset<T>, spc: usize, seed: u64) -> Result<CoresetResult> {
    select(ds, CoresetMethod::Herding, spc, seed)
}

/// Writes the selected subset as a pack file and the indices as JSON next to it.
pub fn export<T: Scalar>(result: &CoresetResult, ds: &LabeledDataset<T>, pack: &Path, index_json: &Path) -> Result<()> {
    save_pack(&result.subset(ds)?, pack)?;
    write_atomic(index_json, &serde_json::to_vec_pretty(result)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csi::Manifest;
    use crate::tensor::Tensor;

    fn points_ds(points: &[&[f64]], labels: Vec<usize>, classes: usize) -> LabeledDataset<f64> {
        let d = points[0].len();
        let flat: Vec<f64> = points.iter().flat_map(|p| p.iter().copied()).collect();
        LabeledDataset::new(
            Tensor::new(vec![points.len(), d], flat).unwrap(),
            labels,
            Manifest::new(classes, vec![d], "t", "t"),
        )
        .unwrap()
    }

    #[test]
    fn kcenter_one_dimensional_trace() {
        let ds = points_ds(&[&[0.0], &[1.0], &[10.0]], vec![0, 0, 0], 1);
        let r = kcenter_select(&ds, 2, 0).unwrap();
        assert_eq!(r.indices, vec![1, 2]);
    }

    #[test]
    fn herding_picks_exact_mean_member() {
        let ds = points_ds(&[&[0.0, 0.0], &[2.0, 0.0], &[1.0, 0.0]], vec![0, 0, 0], 1);
        assert_eq!(herding_select(&ds, 1, 0).unwrap().indices, vec![2]);
    }

    #[test]
    fn kmeans_single_centroid_is_nearest_to_mean() {
        let ds = points_ds(&[&[0.0], &[4.0], &[5.0], &[9.0]], vec![0; 4], 1);
        // mean 4.5: 4 and 5 tie, lowest index wins
        assert_eq!(kmeans_select(&ds, 1, 3).unwrap().indices, vec![1]);
    }

    #[test]
    fn kmeans_separates_two_clusters() {
        let mut pts: Vec<Vec<f64>> = (0..10).map(|i| vec![0.01 * i as f64, 0.0]).collect();
        pts.extend((0..10).map(|i| vec![100.0 + 0.01 * i as f64, 5.0]));
        let refs: Vec<&[f64]> = pts.iter().map(|p| p.as_slice()).collect();
        let ds = points_ds(&refs, vec![0; 20], 1);
        for seed in 0..20 {
            let mut r = kmeans_select(&ds, 2, seed).unwrap().indices;
            r.sort();
            assert!(r[0] < 10 && r[1] >= 10, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn whole_class_and_errors() {
        let ds = points_ds(&[&[0.0], &[1.0], &[2.0], &[3.0]], vec![0, 1, 0, 1], 2);
        for m in CoresetMethod::ALL {
            let mut r = select(&ds, m, 2, 1).unwrap();
            r.indices.sort();
            assert_eq!(r.indices, vec![0, 1, 2, 3], "{m}");
            assert!(matches!(select(&ds, m, 3, 1), Err(Error::ClassTooSmall { class: 0, .. })));
        }
        assert_eq!("herding".parse::<CoresetMethod>().unwrap(), CoresetMethod::Herding);
        assert!("greedy".parse::<CoresetMethod>().is_err());
    }

    #[test]
    fn export_writes_pack_and_indices() {
        let ds = points_ds(&[&[0.0], &[1.0], &[2.0], &[3.0]], vec![0, 1, 0, 1], 2);
        let r = random_select(&ds, 1, 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let (p, j) = (dir.path().join("c.pack"), dir.path().join("c.json"));
        export(&r, &ds, &p, &j).unwrap();
        let back: LabeledDataset<f64> = crate::csi::load_pack(&p).unwrap();
        assert_eq!(back.len(), 2);
        let idx: CoresetResult = serde_json::from_slice(&std::fs::read(&j).unwrap()).unwrap();
        assert_eq!(idx, r);
    }
}
