//! Minibatch SGD with momentum, shared by teacher and student training.

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::csi::LabeledDataset;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::models::{self, correct_count, ModelSpec, NetworkParams};
use crate::rng::derived_rng;
use crate::scalar::Scalar;

const EVAL_BATCH: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochMetrics {
    /// Mean minibatch loss over the epoch.
    pub loss: f64,
    /// Accuracy on the training data with the end-of-epoch parameters.
    pub accuracy: f64,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct SgdSettings {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    /// Measure train accuracy after each epoch (reported as NaN otherwise).
    pub track_accuracy: bool,
}

fn check_input<T: Scalar>(spec: &ModelSpec, data: &LabeledDataset<T>) -> Result<()> {
    if data.sample_shape() != spec.input_shape.as_slice() {
        return Err(Error::ShapeMismatch {
            op: "train",
            lhs: spec.input_shape.clone(),
            rhs: data.sample_shape().to_vec(),
        });
    }
    if data.class_count() > spec.class_count {
        return Err(Error::InvalidArgument(format!(
            "dataset has {} classes, model outputs {}",
            data.class_count(),
            spec.class_count
        )));
    }
    Ok(())
}

/// Accuracy of `params` on `data`, in fixed-size batches.
pub(crate) fn dataset_accuracy<T: Scalar>(
    spec: &ModelSpec,
    params: &NetworkParams<T>,
    data: &LabeledDataset<T>,
) -> Result<f64> {
    check_input(spec, data)?;
    if data.is_empty() {
        return Err(Error::EmptyBatch);
    }
    let mut hits = 0;
    let mut start = 0;
    while start < data.len() {
        let count = EVAL_BATCH.min(data.len() - start);
        let batch = data.samples().rows(start, count);
        let logits = models::forward_values(spec, params, &batch)?;
        hits += correct_count(&logits, &data.labels()[start..start + count])?;
        start += count;
    }
    Ok(hits as f64 / data.len() as f64)
}

/// Trains from `init`; the shuffle order of epoch `e` is derived from `(seed, e)`.
///
/// `on_epoch(e, params, metrics)` runs after every epoch, `e` counting from 1.
pub(crate) fn train_sgd<T: Scalar>(
    data: &LabeledDataset<T>,
    spec: &ModelSpec,
    init: NetworkParams<T>,
    settings: SgdSettings,
    seed: u64,
    mut on_epoch: impl FnMut(usize, &NetworkParams<T>, EpochMetrics),
) -> Result<NetworkParams<T>> {
    check_input(spec, data)?;
    if settings.batch_size == 0 {
        return Err(Error::Config("batch size must be positive".into()));
    }
    let layout = init.layout().to_vec();
    let mut params = init.values().to_vec();
    let mut velocity = vec![T::zero(); params.len()];
    let lr = T::of(settings.lr);
    let mu = T::of(settings.momentum);
    let mut order: Vec<usize> = (0..data.len()).collect();

    for epoch in 1..=settings.epochs {
        order.sort_unstable();
        order.shuffle(&mut derived_rng(seed, "shuffle", epoch as u64));
        let mut loss_sum = 0.0;
        for chunk in order.chunks(settings.batch_size) {
            let mut g = Graph::new();
            let current = NetworkParams::new(params.clone(), layout.clone())?;
            let nodes = current.to_graph(&mut g, true)?;
            let x = g.constant(data.samples().select_rows(chunk))?;
            let labels: Vec<usize> = chunk.iter().map(|&i| data.labels()[i]).collect();
            let logits = models::forward(&mut g, spec, &nodes, x)?;
            let loss = models::classification_loss(&mut g, logits, &labels)?;
            let value = g.value(loss).item().as_f64();
            if !value.is_finite() {
                return Err(Error::NonFinite {
                    what: "training loss",
                    context: format!("epoch {epoch}"),
                });
            }
            loss_sum += value * chunk.len() as f64;
            let grads = g.backward(loss, &nodes)?;
            let mut offset = 0;
            for gid in grads {
                for &gv in g.value(gid).data() {
                    let v = mu * velocity[offset] + gv;
                    velocity[offset] = v;
                    params[offset] = params[offset] - lr * v;
                    offset += 1;
                }
            }
        }
        let snapshot = NetworkParams::new(params.clone(), layout.clone())?;
        if !snapshot.all_finite() {
            return Err(Error::NonFinite {
                what: "parameters",
                context: format!("epoch {epoch}"),
            });
        }
        let metrics = EpochMetrics {
            loss: loss_sum / data.len() as f64,
            accuracy: if settings.track_accuracy {
                dataset_accuracy(spec, &snapshot, data)?
            } else {
                f64::NAN
            },
        };
        on_epoch(epoch, &snapshot, metrics);
    }
    NetworkParams::new(params, layout)
}
