//! Expert trajectories: teacher networks trained on the full real data with
//! their parameters recorded after every epoch.
//!
//! Trajectory file layout (little-endian):
//!
//! ```text
//! "WDTB" | version u32 | spec JSON (u32 len) | config JSON (u32 len) | T u32
//!        | layout: count u32, then per entry name (u32 len) rank u32 dims u32×rank offset u64
//!        | (T+1) snapshots of P float32 | T × (loss f64, accuracy f64)
//! ```
//!
//! Snapshots are always stored as `f32`; trajectories trained in `f64` lose
//! precision on save.

use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::binio::{put_blob, put_u32, put_u64, read_file, write_atomic, Reader};
use crate::csi::LabeledDataset;
use crate::error::{Error, Result};
use crate::models::{init_params, LayoutEntry, ModelSpec, NetworkParams};
use crate::scalar::{DType, Scalar};
use crate::train::{train_sgd, SgdSettings};

pub use crate::train::EpochMetrics;

pub const TRAJECTORY_MAGIC: &[u8; 4] = b"WDTB";
pub const TRAJECTORY_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TeacherConfig {
    pub spec: ModelSpec,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub seed: u64,
}

impl TeacherConfig {
    /// 30 epochs of batch-64 SGD at lr 0.01 with momentum 0.9.
    pub fn new(spec: ModelSpec, seed: u64) -> Self {
        TeacherConfig {
            spec,
            epochs: 30,
            batch_size: 64,
            lr: 0.01,
            momentum: 0.9,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.spec.validate()?;
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::Config("teacher epochs and batch size must be positive".into()));
        }
        if !(self.lr > 0.0) || !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!(
                "teacher needs lr > 0 and 0 <= momentum < 1, got {} / {}",
                self.lr, self.momentum
            )));
        }
        Ok(())
    }
}

/// Parameters after every epoch of one teacher run, index 0 being the initialisation.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory<T> {
    pub snapshots: Vec<NetworkParams<T>>,
    pub spec: ModelSpec,
    pub config: TeacherConfig,
    /// One entry per trained epoch.
    pub metrics: Vec<EpochMetrics>,
}

impl<T: Scalar> Trajectory<T> {
    /// Number of trained epochs `T`; there are `T + 1` snapshots.
    pub fn epochs(&self) -> usize {
        self.snapshots.len() - 1
    }

    pub fn final_params(&self) -> &NetworkParams<T> {
        self.snapshots.last().expect("trajectory has at least one snapshot")
    }
}

/// Trains one teacher and records its trajectory. Deterministic in `cfg`.
pub fn train_teacher<T: Scalar>(train: &LabeledDataset<T>, cfg: &TeacherConfig) -> Result<Trajectory<T>> {
    cfg.validate()?;
    let init = init_params::<T>(&cfg.spec, cfg.seed)?;
    let mut snapshots = vec![init.clone()];
    let mut metrics = Vec::with_capacity(cfg.epochs);
    let settings = SgdSettings {
        epochs: cfg.epochs,
        batch_size: cfg.batch_size,
        lr: cfg.lr,
        momentum: cfg.momentum,
        track_accuracy: true,
    };
    train_sgd(train, &cfg.spec, init, settings, cfg.seed, |epoch, params, m| {
        log::debug!("teacher epoch {epoch}: loss {:.4} acc {:.4}", m.loss, m.accuracy);
        snapshots.push(params.clone());
        metrics.push(m);
    })?;
    Ok(Trajectory {
        snapshots,
        spec: cfg.spec.clone(),
        config: cfg.clone(),
        metrics,
    })
}

pub fn encode_trajectory<T: Scalar>(t: &Trajectory<T>) -> Result<Vec<u8>> {
    let layout = t.snapshots[0].layout();
    let p = t.snapshots[0].len();
    let mut out = Vec::with_capacity(64 + t.snapshots.len() * p * 4);
    out.extend_from_slice(TRAJECTORY_MAGIC);
    put_u32(&mut out, TRAJECTORY_VERSION);
    put_blob(&mut out, &serde_json::to_vec(&t.spec)?);
    put_blob(&mut out, &serde_json::to_vec(&t.config)?);
    put_u32(&mut out, t.epochs() as u32);
    put_u32(&mut out, layout.len() as u32);
    for e in layout {
        put_blob(&mut out, e.name.as_bytes());
        put_u32(&mut out, e.shape.len() as u32);
        for &d in &e.shape {
            put_u32(&mut out, d as u32);
        }
        put_u64(&mut out, e.offset as u64);
    }
    for s in &t.snapshots {
        if s.layout() != layout {
            return Err(Error::InvalidArgument("snapshots disagree on layout".into()));
        }
        for &v in s.values() {
            out.extend_from_slice(&(v.as_f64() as f32).to_le_bytes());
        }
    }
    for m in &t.metrics {
        out.extend_from_slice(&m.loss.to_le_bytes());
        out.extend_from_slice(&m.accuracy.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_trajectory<T: Scalar>(bytes: &[u8]) -> Result<Trajectory<T>> {
    if bytes.len() < 4 || &bytes[..4] != TRAJECTORY_MAGIC {
        return Err(Error::NotATrajectoryFile);
    }
    let mut r = Reader::new(&bytes[4..], Error::TruncatedTrajectory);
    let version = r.u32("version")?;
    if version != TRAJECTORY_VERSION {
        return Err(Error::UnsupportedVersion {
            format: "trajectory",
            found: version,
            expected: TRAJECTORY_VERSION,
        });
    }
    let spec: ModelSpec = serde_json::from_slice(r.blob("spec")?)?;
    let config: TeacherConfig = serde_json::from_slice(r.blob("config")?)?;
    let epochs = r.u32("epoch count")? as usize;
    let entries = r.u32("layout count")? as usize;
    let mut layout = Vec::with_capacity(entries.min(1024));
    for _ in 0..entries {
        let name = String::from_utf8(r.blob("layout name")?.to_vec())
            .map_err(|_| Error::TruncatedTrajectory("layout name is not UTF-8".into()))?;
        let rank = r.u32("layout rank")? as usize;
        let shape = (0..rank)
            .map(|_| r.u32("layout dims").map(|d| d as usize))
            .collect::<Result<Vec<_>>>()?;
        let offset = r.u64("layout offset")? as usize;
        layout.push(LayoutEntry { name, shape, offset });
    }
    if layout != spec.layout() {
        return Err(Error::InvalidArgument(
            "trajectory layout does not match its model spec".into(),
        ));
    }
    let p: usize = layout.iter().map(LayoutEntry::len).sum();
    let mut snapshots = Vec::with_capacity(epochs + 1);
    for i in 0..=epochs {
        let raw = r
            .take(p * 4, &format!("snapshot {i} of {}", epochs + 1))?;
        let flat: Vec<T> = raw.chunks_exact(4).map(|b| T::read_le(DType::Float32, b)).collect();
        snapshots.push(NetworkParams::new(flat, layout.clone())?);
    }
    let mut metrics = Vec::with_capacity(epochs);
    for _ in 0..epochs {
        metrics.push(EpochMetrics {
            loss: r.f64("metrics")?,
            accuracy: r.f64("metrics")?,
        });
    }
    Ok(Trajectory {
        snapshots,
        spec,
        config,
        metrics,
    })
}

pub fn save_trajectory<T: Scalar>(t: &Trajectory<T>, path: &Path) -> Result<()> {
    write_atomic(path, &encode_trajectory(t)?)
}

pub fn load_trajectory<T: Scalar>(path: &Path) -> Result<Trajectory<T>> {
    decode_trajectory(&read_file(path)?)
}

/// Draws a start epoch uniformly from `{0, …, t_plus − 1}`, additionally
/// capped so that `t0 + lookahead ≤ T`, and returns it with a copy of that
/// snapshot.
pub fn sample_start<T: Scalar, R: Rng + ?Sized>(
    t: &Trajectory<T>,
    t_plus: usize,
    lookahead: usize,
    rng: &mut R,
) -> Result<(usize, NetworkParams<T>)> {
    let total = t.epochs();
    if t_plus == 0 || t_plus > total {
        return Err(Error::InvalidArgument(format!(
            "start bound {t_plus} must lie in 1..={total}"
        )));
    }
    if lookahead > total {
        return Err(Error::InvalidArgument(format!(
            "lookahead {lookahead} exceeds trajectory length {total}"
        )));
    }
    let upper = t_plus.min(total - lookahead + 1);
    let t0 = rng.gen_range(0..upper);
    Ok((t0, t.snapshots[t0].clone()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::csi::{synth_csi, MultipathConfig};
    use crate::rng::rng_from;

    fn small_data() -> LabeledDataset<f32> {
        let cfg = MultipathConfig::procedural(3, 4, 6, 3, 0.05, 1);
        synth_csi(&cfg, 10, 3).unwrap()
    }

    fn small_teacher(epochs: usize) -> Trajectory<f32> {
        let data = small_data();
        let spec = ModelSpec::mlp(vec![4, 6], 3, vec![8]);
        let mut cfg = TeacherConfig::new(spec, 5);
        cfg.epochs = epochs;
        cfg.batch_size = 8;
        train_teacher(&data, &cfg).unwrap()
    }

    #[test]
    fn snapshot_count_is_epochs_plus_one() {
        let t = small_teacher(10);
        assert_eq!(t.snapshots.len(), 11);
        assert_eq!(t.metrics.len(), 10);
        assert!(t.snapshots.iter().all(|s| s.same_layout(&t.snapshots[0])));
    }

    #[test]
    fn training_is_deterministic() {
        let a = small_teacher(3);
        let b = small_teacher(3);
        for (x, y) in a.snapshots.iter().zip(&b.snapshots) {
            assert!(x.flat().bit_eq(y.flat()));
        }
    }

    #[test]
    fn trajectory_roundtrip_and_errors() {
        let t = small_teacher(4);
        let bytes = encode_trajectory(&t).unwrap();
        let back: Trajectory<f32> = decode_trajectory(&bytes).unwrap();
        assert_eq!(back, t);

        let mut bad = bytes.clone();
        bad[0] = b'X';
        assert!(matches!(decode_trajectory::<f32>(&bad), Err(Error::NotATrajectoryFile)));

        // Header says 5 snapshots; drop the last one and the metrics after it.
        let p = t.snapshots[0].len();
        let cut = bytes.len() - 16 * t.metrics.len() - 4 * p;
        let err = decode_trajectory::<f32>(&bytes[..cut]).unwrap_err();
        assert!(matches!(err, Error::TruncatedTrajectory(_)), "{err}");

        let mut v = bytes;
        v[4..8].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode_trajectory::<f32>(&v),
            Err(Error::UnsupportedVersion { found: 2, .. })
        ));
    }

    #[test]
    fn sample_start_contract() {
        let t = small_teacher(4);
        let mut rng = rng_from(1);
        for _ in 0..20 {
            let (t0, p) = sample_start(&t, 1, 2, &mut rng).unwrap();
            assert_eq!(t0, 0);
            assert!(p.flat().bit_eq(t.snapshots[0].flat()));
        }
        for _ in 0..200 {
            let (t0, p) = sample_start(&t, 4, 2, &mut rng).unwrap();
            assert!(t0 + 2 <= 4);
            assert!(p.flat().bit_eq(t.snapshots[t0].flat()));
        }
        assert!(sample_start(&t, 5, 1, &mut rng).is_err());
        assert!(sample_start(&t, 0, 1, &mut rng).is_err());
    }
}
