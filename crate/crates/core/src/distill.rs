//! Trajectory-matching distillation of a small synthetic training set.
//!
//! One meta-step starts a student at an expert snapshot `θ_t`, takes `K`
//! differentiable SGD steps on the synthetic set with a learnable step size
//! `α`, and scores the endpoint against the expert snapshot `θ_{t+J}`:
//!
//! ```text
//! L = ‖θ_student − θ_{t+J}‖² / ‖θ_t − θ_{t+J}‖²
//! ```
//!
//! The gradient of `L` flows back through every inner step to the synthetic
//! samples and to `α`, which are then updated with SGD and momentum.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use rand::seq::SliceRandom;
use rand::Rng as _;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::csi::{save_pack, LabeledDataset, Manifest};
use crate::error::{Error, Result};
use crate::expert::{encode_trajectory, sample_start, Trajectory};
use crate::graph::{Graph, NodeId};
use crate::models::{self, ModelSpec, NetworkParams};
use crate::rng::{derive_seed, rng_from, Rng};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Synthetic sets up to this size are used whole in every inner step.
pub const FULL_BATCH_LIMIT: usize = 512;
/// Minibatch size of inner steps on larger synthetic sets.
pub const INNER_BATCH: usize = 256;
/// Lower bound applied to `α` after every meta-update.
pub const MIN_ALPHA: f64 = 1e-6;
/// Start epochs tried before a degenerate expert segment becomes an error.
pub const MAX_RESAMPLES: usize = 10;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DistillConfig {
    /// Inner student steps `K`.
    pub inner_steps: usize,
    /// Expert lookahead `J`, in epochs.
    pub expert_epochs: usize,
    /// Start epochs are drawn from `0..max_start_epoch`.
    pub max_start_epoch: usize,
    pub iterations: usize,
    pub lr_samples: f64,
    pub lr_alpha: f64,
    pub meta_momentum: f64,
    pub alpha_init: f64,
    pub denom_eps: f64,
    /// Write a checkpoint pack every this many iterations; 0 disables.
    pub checkpoint_every: usize,
    pub seed: u64,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            inner_steps: 16,
            expert_epochs: 2,
            max_start_epoch: 15,
            iterations: 2000,
            lr_samples: 30.0,
            lr_alpha: 1e-3,
            meta_momentum: 0.5,
            alpha_init: 0.01,
            denom_eps: 1e-12,
            checkpoint_every: 0,
            seed: 0,
        }
    }
}

impl DistillConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.inner_steps == 0 || self.expert_epochs == 0 || self.max_start_epoch == 0 {
            return fail("inner_steps, expert_epochs and max_start_epoch must be positive".into());
        }
        if !(self.denom_eps > 0.0) {
            return fail(format!("denom_eps must be positive, got {}", self.denom_eps));
        }
        if !(self.alpha_init > 0.0) {
            return fail(format!("alpha_init must be positive, got {}", self.alpha_init));
        }
        if !(self.lr_samples >= 0.0) || !(self.lr_alpha >= 0.0) {
            return fail("meta learning rates must be non-negative".into());
        }
        if !(0.0..1.0).contains(&self.meta_momentum) {
            return fail(format!("meta_momentum must lie in [0, 1), got {}", self.meta_momentum));
        }
        Ok(())
    }
}

/// Learnable samples with fixed labels and a learnable inner step size.
#[derive(Clone, Debug, PartialEq)]
pub struct SyntheticDataset<T> {
    /// `[spc · C, ..sample_shape]`, class-major.
    pub samples: Tensor<T>,
    pub labels: Vec<usize>,
    pub class_count: usize,
    pub sample_shape: Vec<usize>,
    pub spc: usize,
    pub alpha: f64,
    pub iteration: usize,
}

impl<T: Scalar> SyntheticDataset<T> {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    /// The synthetic set as an ordinary dataset, with distillation metadata
    /// in the manifest.
    pub fn to_labeled(&self) -> Result<LabeledDataset<T>> {
        let mut m = Manifest::new(self.class_count, self.sample_shape.clone(), "distilled", "distillation");
        m.extra.insert("spc".into(), self.spc.into());
        m.extra.insert("alpha".into(), self.alpha.into());
        m.extra.insert("iterations".into(), self.iteration.into());
        LabeledDataset::new(self.samples.clone(), self.labels.clone(), m)
    }
}

/// Copies `spc` distinct random real samples of every class.
pub fn init_synthetic<T: Scalar>(
    real: &LabeledDataset<T>,
    spc: usize,
    alpha_init: f64,
    seed: u64,
) -> Result<SyntheticDataset<T>> {
    if spc == 0 {
        return Err(Error::InvalidArgument("spc must be positive".into()));
    }
    let mut rng = rng_from(seed);
    let mut chosen = Vec::with_capacity(spc * real.class_count());
    for c in 0..real.class_count() {
        let idx = real.class_indices(c);
        if idx.len() < spc {
            return Err(Error::ClassTooSmall {
                class: c,
                available: idx.len(),
                required: spc,
            });
        }
        chosen.extend(idx.choose_multiple(&mut rng, spc).copied());
    }
    Ok(SyntheticDataset {
        samples: real.samples().select_rows(&chosen),
        labels: chosen.iter().map(|&i| real.labels()[i]).collect(),
        class_count: real.class_count(),
        sample_shape: real.sample_shape().to_vec(),
        spc,
        alpha: alpha_init,
        iteration: 0,
    })
}

/// `θ − α · ∇_θ loss`, recorded in the graph. `alpha` is a one-element node.
pub fn sgd_step<T: Scalar>(
    graph: &mut Graph<T>,
    params: &[NodeId],
    loss: NodeId,
    alpha: NodeId,
) -> Result<Vec<NodeId>> {
    let grads = graph.grad(loss, params)?;
    params
        .iter()
        .zip(grads)
        .map(|(&p, g)| {
            let step = graph.scale(g, alpha)?;
            graph.sub(p, step)
        })
        .collect()
}

/// One inner student step on a batch of synthetic samples.
pub fn inner_update<T: Scalar>(
    graph: &mut Graph<T>,
    spec: &ModelSpec,
    params: &[NodeId],
    batch: NodeId,
    labels: &[usize],
    alpha: NodeId,
) -> Result<Vec<NodeId>> {
    let logits = models::forward(graph, spec, params, batch)?;
    let loss = models::classification_loss(graph, logits, labels)?;
    if !graph.value(loss).item().as_f64().is_finite() {
        return Err(Error::NonFinite {
            what: "inner loss",
            context: "student step".into(),
        });
    }
    sgd_step(graph, params, loss, alpha)
}

fn check_same_layout<T: Scalar>(a: &NetworkParams<T>, b: &NetworkParams<T>) -> Result<()> {
    if a.same_layout(b) {
        Ok(())
    } else {
        Err(Error::InvalidArgument("expert snapshots have different layouts".into()))
    }
}

/// `‖θ_start − θ_target‖²` in `f64`, failing when it is below `denom_eps`.
pub fn segment_length<T: Scalar>(
    expert_start: &NetworkParams<T>,
    expert_target: &NetworkParams<T>,
    denom_eps: f64,
) -> Result<f64> {
    check_same_layout(expert_start, expert_target)?;
    let d: f64 = expert_start
        .values()
        .iter()
        .zip(expert_target.values())
        .map(|(a, b)| {
            let x = a.as_f64() - b.as_f64();
            x * x
        })
        .sum();
    if d < denom_eps {
        return Err(Error::DegenerateSegment {
            distance: d,
            eps: denom_eps,
        });
    }
    Ok(d)
}

/// Normalised squared distance of the student endpoint to the expert target.
///
/// `student_final` holds one node per layout entry of the expert parameters.
pub fn matching_loss<T: Scalar>(
    graph: &mut Graph<T>,
    student_final: &[NodeId],
    expert_start: &NetworkParams<T>,
    expert_target: &NetworkParams<T>,
    denom_eps: f64,
) -> Result<NodeId> {
    let denom = segment_length(expert_start, expert_target, denom_eps)?;
    let targets = expert_target.tensors();
    if targets.len() != student_final.len() {
        return Err(Error::InvalidArgument(format!(
            "{} student nodes for {} parameter tensors",
            student_final.len(),
            targets.len()
        )));
    }
    let mut total: Option<NodeId> = None;
    for (&s, t) in student_final.iter().zip(targets) {
        let t = graph.constant(t)?;
        let diff = graph.sub(s, t)?;
        let sq = graph.mul(diff, diff)?;
        let part = graph.sum(sq)?;
        total = Some(match total {
            Some(acc) => graph.add(acc, part)?,
            None => part,
        });
    }
    let total = total.ok_or_else(|| Error::InvalidArgument("no parameters to match".into()))?;
    graph.mul_const(total, 1.0 / denom)
}

/// Synthetic row indices used by each inner step; `None` means the full set.
pub fn inner_batches(n: usize, steps: usize, rng: &mut Rng) -> Option<Vec<Vec<usize>>> {
    if n <= FULL_BATCH_LIMIT {
        return None;
    }
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(rng);
    Some(
        (0..steps)
            .map(|s| (0..INNER_BATCH).map(|i| order[(s * INNER_BATCH + i) % n]).collect())
            .collect(),
    )
}

/// Matching loss and its gradients with respect to samples and `α`.
#[derive(Clone, Debug)]
pub struct MetaGradient<T> {
    pub loss: f64,
    pub samples: Tensor<T>,
    pub alpha: f64,
}

/// Unrolls `inner_steps` student updates from `expert_start` and
/// differentiates the matching loss against `expert_target`.
pub fn meta_gradient<T: Scalar>(
    synth: &SyntheticDataset<T>,
    spec: &ModelSpec,
    expert_start: &NetworkParams<T>,
    expert_target: &NetworkParams<T>,
    inner_steps: usize,
    denom_eps: f64,
    batches: Option<&[Vec<usize>]>,
) -> Result<MetaGradient<T>> {
    check_same_layout(expert_start, expert_target)?;
    if expert_start.layout() != spec.layout().as_slice() {
        return Err(Error::InvalidArgument(
            "expert parameters do not match the model spec".into(),
        ));
    }
    let mut g = Graph::new();
    let x = g.leaf(synth.samples.clone())?;
    let alpha = g.leaf(Tensor::scalar(T::of(synth.alpha)))?;
    let mut params = expert_start.to_graph(&mut g, false)?;
    let full_shape = synth.samples.shape().to_vec();
    for step in 0..inner_steps {
        params = match batches {
            None => inner_update(&mut g, spec, &params, x, &synth.labels, alpha),
            Some(plan) => {
                let rows = plan.get(step).ok_or_else(|| {
                    Error::InvalidArgument(format!("batch plan has no entry for step {step}"))
                })?;
                let mut shape = full_shape.clone();
                shape[0] = rows.len();
                let per = synth.samples.len() / full_shape[0];
                let index: Arc<[usize]> = rows
                    .iter()
                    .flat_map(|&r| r * per..(r + 1) * per)
                    .collect();
                let batch = g.gather(x, index, &shape)?;
                let labels: Vec<usize> = rows.iter().map(|&r| synth.labels[r]).collect();
                inner_update(&mut g, spec, &params, batch, &labels, alpha)
            }
        }
        .map_err(|e| match e {
            Error::NonFinite { what, .. } => Error::NonFinite {
                what,
                context: format!("inner step {step}"),
            },
            other => other,
        })?;
    }
    let loss = matching_loss(&mut g, &params, expert_start, expert_target, denom_eps)?;
    let grads = g.backward(loss, &[x, alpha])?;
    Ok(MetaGradient {
        loss: g.value(loss).item().as_f64(),
        samples: g.value(grads[0]).clone(),
        alpha: g.value(grads[1]).item().as_f64(),
    })
}

/// Synthetic set plus meta-optimiser velocity.
#[derive(Clone, Debug, PartialEq)]
pub struct DistillState<T> {
    pub synthetic: SyntheticDataset<T>,
    pub velocity_samples: Vec<T>,
    pub velocity_alpha: f64,
}

impl<T: Scalar> DistillState<T> {
    pub fn new(synthetic: SyntheticDataset<T>) -> Self {
        let n = synthetic.samples.len();
        DistillState {
            synthetic,
            velocity_samples: vec![T::zero(); n],
            velocity_alpha: 0.0,
        }
    }
}

/// One meta-iteration against `trajectory`. Returns the matching loss.
pub fn distill_step<T: Scalar>(
    state: &mut DistillState<T>,
    trajectory: &Trajectory<T>,
    cfg: &DistillConfig,
    rng: &mut Rng,
) -> Result<f64> {
    let j = cfg.expert_epochs;
    let mut attempt = 0;
    let (start, target) = loop {
        let (t0, start) = sample_start(trajectory, cfg.max_start_epoch, j, rng)?;
        let target = &trajectory.snapshots[t0 + j];
        match segment_length(&start, target, cfg.denom_eps) {
            Ok(_) => break (start, target.clone()),
            Err(e @ Error::DegenerateSegment { .. }) => {
                attempt += 1;
                if attempt >= MAX_RESAMPLES {
                    return Err(e);
                }
                log::debug!("degenerate segment at epoch {t0}, resampling");
            }
            Err(e) => return Err(e),
        }
    };
    let synth = &mut state.synthetic;
    let batches = inner_batches(synth.len(), cfg.inner_steps, rng);
    let mg = meta_gradient(
        synth,
        &trajectory.spec,
        &start,
        &target,
        cfg.inner_steps,
        cfg.denom_eps,
        batches.as_deref(),
    )
    .map_err(|e| match e {
        Error::NonFinite { what, context } => Error::NonFinite {
            what,
            context: format!("iteration {}, {context}", synth.iteration),
        },
        other => other,
    })?;
    if !mg.loss.is_finite() || !mg.samples.all_finite() || !mg.alpha.is_finite() {
        return Err(Error::NonFinite {
            what: "meta-gradient",
            context: format!("iteration {}", synth.iteration),
        });
    }

    let mu = T::of(cfg.meta_momentum);
    let lr = T::of(cfg.lr_samples);
    let mut values = synth.samples.to_vec();
    for ((x, v), &gx) in values
        .iter_mut()
        .zip(state.velocity_samples.iter_mut())
        .zip(mg.samples.data())
    {
        *v = mu * *v + gx;
        *x = *x - lr * *v;
    }
    synth.samples = Tensor::new(synth.samples.shape().to_vec(), values)?;
    state.velocity_alpha = cfg.meta_momentum * state.velocity_alpha + mg.alpha;
    synth.alpha = (synth.alpha - cfg.lr_alpha * state.velocity_alpha).max(MIN_ALPHA);
    synth.iteration += 1;
    Ok(mg.loss)
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub iteration: usize,
    pub loss: f64,
    pub alpha: f64,
}

#[derive(Clone, Debug)]
pub struct DistillOutcome<T> {
    pub synthetic: SyntheticDataset<T>,
    pub losses: Vec<LossRecord>,
    /// Hex SHA-256 over the encoded expert trajectories.
    pub buffer_digest: String,
}

impl<T: Scalar> DistillOutcome<T> {
    /// The distilled set with the buffer digest recorded in its manifest.
    pub fn to_labeled(&self) -> Result<LabeledDataset<T>> {
        let ds = self.synthetic.to_labeled()?;
        let mut m = ds.manifest().clone();
        m.extra.insert("buffer_digest".into(), self.buffer_digest.clone().into());
        ds.with_manifest(m)
    }
}

pub fn buffer_digest<T: Scalar>(buffer: &[Trajectory<T>]) -> Result<String> {
    let mut h = Sha256::new();
    for t in buffer {
        h.update(encode_trajectory(t)?);
    }
    Ok(h.finalize().iter().map(|b| format!("{b:02x}")).collect())
}

/// Path of the checkpoint written after `iteration` meta-steps.
pub fn checkpoint_path(dir: &Path, iteration: usize) -> PathBuf {
    dir.join(format!("checkpoint_{iteration:06}.pack"))
}

/// Full distillation run. Each meta-step draws a trajectory uniformly from
/// `buffer`.
pub fn distill<T: Scalar>(
    real: &LabeledDataset<T>,
    buffer: &[Trajectory<T>],
    cfg: &DistillConfig,
    spc: usize,
    checkpoint_dir: Option<&Path>,
) -> Result<DistillOutcome<T>> {
    cfg.validate()?;
    let first = buffer
        .first()
        .ok_or_else(|| Error::InvalidArgument("expert buffer is empty".into()))?;
    if buffer.iter().any(|t| t.spec != first.spec) {
        return Err(Error::InvalidArgument(
            "expert trajectories use different model specs".into(),
        ));
    }
    if first.spec.input_shape != real.sample_shape() {
        return Err(Error::ShapeMismatch {
            op: "distill",
            lhs: first.spec.input_shape.clone(),
            rhs: real.sample_shape().to_vec(),
        });
    }
    let digest = buffer_digest(buffer)?;
    let init = init_synthetic(real, spc, cfg.alpha_init, derive_seed(cfg.seed, "init", spc as u64))?;
    let mut state = DistillState::new(init);
    let mut rng = rng_from(derive_seed(cfg.seed, "meta", spc as u64));
    let mut losses = Vec::with_capacity(cfg.iterations);
    for it in 1..=cfg.iterations {
        let traj = &buffer[rng.gen_range(0..buffer.len())];
        let loss = distill_step(&mut state, traj, cfg, &mut rng)?;
        losses.push(LossRecord {
            iteration: it,
            loss,
            alpha: state.synthetic.alpha,
        });
        if it % 50 == 0 || it == cfg.iterations {
            log::info!("distill spc={spc} iteration {it}: loss {loss:.4} alpha {:.5}", state.synthetic.alpha);
        }
        if let Some(dir) = checkpoint_dir {
            if cfg.checkpoint_every > 0 && it % cfg.checkpoint_every == 0 {
                save_pack(&state.synthetic.to_labeled()?, &checkpoint_path(dir, it))?;
            }
        }
    }
    Ok(DistillOutcome {
        synthetic: state.synthetic,
        losses,
        buffer_digest: digest,
    })
}

/// Writes `iteration,loss,alpha` rows.
pub fn write_loss_csv(path: &Path, records: &[LossRecord]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path)?;
    for r in records {
        w.serialize(r)?;
    }
    w.flush().map_err(|e| Error::io(path, e))?;
    Ok(())
}
