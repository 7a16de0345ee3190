//! Network architectures expressed over [`Graph`] nodes.
//!
//! Two families are provided: a fully connected MLP and a compact CNN made of
//! `3×3 conv → relu → 2×2 average pool` blocks followed by a linear
//! classifier. Convolutions are lowered to an im2col [`Graph::gather`] plus a
//! matrix product, and pooling to a [`Graph::scatter_add`], so both stay
//! inside the differentiable primitive set.

use std::sync::Arc;

use rand::distributions::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId, NO_INDEX};
use crate::rng::rng_from;
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

pub const DEFAULT_MLP_HIDDEN: [usize; 2] = [256, 256];
pub const DEFAULT_CNN_CHANNELS: [usize; 2] = [16, 32];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Mlp,
    Cnn,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            ModelKind::Mlp => "mlp",
            ModelKind::Cnn => "cnn",
        }
    }
}

impl std::str::FromStr for ModelKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "mlp" => Ok(ModelKind::Mlp),
            "cnn" => Ok(ModelKind::Cnn),
            other => Err(Error::Config(format!("unknown model kind `{other}`"))),
        }
    }
}

/// Architecture description.
///
/// For `Mlp`, `hidden` lists the widths of the hidden layers. For `Cnn` it
/// lists the output channels of each conv block, and `input_shape` must be a
/// single-channel `[height, width]` grid.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelSpec {
    pub kind: ModelKind,
    pub input_shape: Vec<usize>,
    pub class_count: usize,
    pub hidden: Vec<usize>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayoutEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub offset: usize,
}

impl LayoutEntry {
    pub fn len(&self) -> usize {
        numel(&self.shape)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

struct LayerPlan {
    name: String,
    weight: Vec<usize>,
    fan_in: usize,
    fan_out: usize,
}

impl ModelSpec {
    pub fn mlp(input_shape: Vec<usize>, class_count: usize, hidden: Vec<usize>) -> Self {
        ModelSpec {
            kind: ModelKind::Mlp,
            input_shape,
            class_count,
            hidden,
        }
    }

    pub fn cnn(input_shape: Vec<usize>, class_count: usize, channels: Vec<usize>) -> Self {
        ModelSpec {
            kind: ModelKind::Cnn,
            input_shape,
            class_count,
            hidden: channels,
        }
    }

    /// The architecture's default widths for the given input.
    pub fn with_defaults(kind: ModelKind, input_shape: Vec<usize>, class_count: usize) -> Self {
        let hidden = match kind {
            ModelKind::Mlp => DEFAULT_MLP_HIDDEN.to_vec(),
            ModelKind::Cnn => DEFAULT_CNN_CHANNELS.to_vec(),
        };
        ModelSpec {
            kind,
            input_shape,
            class_count,
            hidden,
        }
    }

    pub fn input_len(&self) -> usize {
        numel(&self.input_shape)
    }

    pub fn validate(&self) -> Result<()> {
        if self.class_count < 2 {
            return Err(Error::Config(format!(
                "class count must be at least 2, got {}",
                self.class_count
            )));
        }
        if self.input_shape.is_empty() || self.input_shape.contains(&0) {
            return Err(Error::Config(format!(
                "invalid input shape {:?}",
                self.input_shape
            )));
        }
        if self.hidden.contains(&0) {
            return Err(Error::Config("zero-width layer".into()));
        }
        if self.kind == ModelKind::Cnn {
            if self.input_shape.len() != 2 {
                return Err(Error::Config(format!(
                    "cnn expects a [height, width] input, got {:?}",
                    self.input_shape
                )));
            }
            if self.hidden.is_empty() {
                return Err(Error::Config("cnn needs at least one conv block".into()));
            }
            let (h, w) = self.pooled_extent(self.hidden.len());
            if h == 0 || w == 0 {
                return Err(Error::Config(format!(
                    "input {:?} too small for {} pooling stages",
                    self.input_shape,
                    self.hidden.len()
                )));
            }
        }
        Ok(())
    }

    fn pooled_extent(&self, stages: usize) -> (usize, usize) {
        let (mut h, mut w) = (self.input_shape[0], self.input_shape[1]);
        for _ in 0..stages {
            h /= 2;
            w /= 2;
        }
        (h, w)
    }

    fn plan(&self) -> Vec<LayerPlan> {
        let mut plan = Vec::new();
        match self.kind {
            ModelKind::Mlp => {
                let mut width = self.input_len();
                for (i, &h) in self.hidden.iter().enumerate() {
                    plan.push(LayerPlan {
                        name: format!("fc{i}"),
                        weight: vec![width, h],
                        fan_in: width,
                        fan_out: h,
                    });
                    width = h;
                }
                plan.push(LayerPlan {
                    name: format!("fc{}", self.hidden.len()),
                    weight: vec![width, self.class_count],
                    fan_in: width,
                    fan_out: self.class_count,
                });
            }
            ModelKind::Cnn => {
                let mut cin = 1;
                for (i, &cout) in self.hidden.iter().enumerate() {
                    plan.push(LayerPlan {
                        name: format!("conv{i}"),
                        weight: vec![9 * cin, cout],
                        fan_in: 9 * cin,
                        fan_out: 9 * cout,
                    });
                    cin = cout;
                }
                let (h, w) = self.pooled_extent(self.hidden.len());
                let flat = h * w * cin;
                plan.push(LayerPlan {
                    name: "fc".into(),
                    weight: vec![flat, self.class_count],
                    fan_in: flat,
                    fan_out: self.class_count,
                });
            }
        }
        plan
    }

    /// Parameter layout: a weight and a bias per layer, in forward order.
    pub fn layout(&self) -> Vec<LayoutEntry> {
        let mut offset = 0;
        let mut out = Vec::new();
        for layer in self.plan() {
            for (suffix, shape) in [
                ("weight", layer.weight.clone()),
                ("bias", vec![layer.weight[1]]),
            ] {
                let len = numel(&shape);
                out.push(LayoutEntry {
                    name: format!("{}.{suffix}", layer.name),
                    shape,
                    offset,
                });
                offset += len;
            }
        }
        out
    }

    pub fn param_count(&self) -> usize {
        self.layout().iter().map(LayoutEntry::len).sum()
    }
}

/// Flat parameter vector plus the layer layout that slices it.
#[derive(Clone, Debug, PartialEq)]
pub struct NetworkParams<T> {
    flat: Tensor<T>,
    layout: Vec<LayoutEntry>,
}

pub(crate) fn check_layout(layout: &[LayoutEntry], len: usize) -> Result<()> {
    let mut expected = 0;
    for e in layout {
        if e.offset != expected || e.shape.contains(&0) {
            return Err(Error::InvalidShape(format!(
                "layout entry {} at offset {} (expected {expected})",
                e.name, e.offset
            )));
        }
        expected += e.len();
    }
    if expected != len {
        return Err(Error::InvalidShape(format!(
            "layout covers {expected} elements, flat vector has {len}"
        )));
    }
    Ok(())
}

impl<T: Scalar> NetworkParams<T> {
    pub fn new(flat: Vec<T>, layout: Vec<LayoutEntry>) -> Result<Self> {
        check_layout(&layout, flat.len())?;
        let n = flat.len();
        Ok(NetworkParams {
            flat: Tensor::new(vec![n], flat)?,
            layout,
        })
    }

    pub fn zeros(spec: &ModelSpec) -> Self {
        let layout = spec.layout();
        let n = layout.iter().map(LayoutEntry::len).sum();
        NetworkParams {
            flat: Tensor::zeros(&[n]),
            layout,
        }
    }

    pub fn flat(&self) -> &Tensor<T> {
        &self.flat
    }

    pub fn values(&self) -> &[T] {
        self.flat.data()
    }

    pub fn layout(&self) -> &[LayoutEntry] {
        &self.layout
    }

    pub fn len(&self) -> usize {
        self.flat.len()
    }

    pub fn is_empty(&self) -> bool {
        self.flat.is_empty()
    }

    pub fn same_layout(&self, other: &NetworkParams<T>) -> bool {
        self.layout == other.layout
    }

    /// One tensor per layout entry.
    pub fn tensors(&self) -> Vec<Tensor<T>> {
        self.layout
            .iter()
            .map(|e| {
                Tensor::from_parts(
                    e.shape.clone(),
                    self.flat.data()[e.offset..e.offset + e.len()].to_vec(),
                )
            })
            .collect()
    }

    /// Inserts the parameters into `graph`, as leaves or as constants.
    pub fn to_graph(&self, graph: &mut Graph<T>, as_leaves: bool) -> Result<Vec<NodeId>> {
        self.tensors()
            .into_iter()
            .map(|t| {
                if as_leaves {
                    graph.leaf(t)
                } else {
                    graph.constant(t)
                }
            })
            .collect()
    }

    /// Collects the current values of per-entry nodes back into a flat vector.
    pub fn from_graph(graph: &Graph<T>, nodes: &[NodeId], layout: &[LayoutEntry]) -> Result<Self> {
        if nodes.len() != layout.len() {
            return Err(Error::InvalidArgument(format!(
                "{} nodes for {} layout entries",
                nodes.len(),
                layout.len()
            )));
        }
        let mut flat = Vec::new();
        for (&id, e) in nodes.iter().zip(layout) {
            if graph.shape(id) != e.shape.as_slice() {
                return Err(Error::ShapeMismatch {
                    op: "collect_params",
                    lhs: e.shape.clone(),
                    rhs: graph.shape(id).to_vec(),
                });
            }
            flat.extend_from_slice(graph.value(id).data());
        }
        NetworkParams::new(flat, layout.to_vec())
    }

    pub fn squared_distance(&self, other: &NetworkParams<T>) -> T {
        self.flat.squared_distance(&other.flat)
    }

    pub fn cast<U: Scalar>(&self) -> NetworkParams<U> {
        NetworkParams {
            flat: self.flat.cast(),
            layout: self.layout.clone(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.flat.all_finite()
    }
}

/// Glorot-uniform weights and zero biases, deterministic in `(spec, seed)`.
pub fn init_params<T: Scalar>(spec: &ModelSpec, seed: u64) -> Result<NetworkParams<T>> {
    spec.validate()?;
    let mut rng = rng_from(seed);
    let mut flat = Vec::with_capacity(spec.param_count());
    for layer in spec.plan() {
        let bound = (6.0 / (layer.fan_in + layer.fan_out) as f64).sqrt();
        let dist = Uniform::new_inclusive(-bound, bound);
        let n = numel(&layer.weight);
        flat.extend((0..n).map(|_| T::of(dist.sample(&mut rng))));
        flat.extend(std::iter::repeat_n(T::zero(), layer.weight[1]));
    }
    NetworkParams::new(flat, spec.layout())
}

/// All-zero parameters, for debugging and degenerate-case tests.
pub fn init_zero<T: Scalar>(spec: &ModelSpec) -> Result<NetworkParams<T>> {
    spec.validate()?;
    Ok(NetworkParams::zeros(spec))
}

fn check_batch<T: Scalar>(spec: &ModelSpec, graph: &Graph<T>, batch: NodeId) -> Result<usize> {
    let shape = graph.shape(batch);
    if shape.len() != spec.input_shape.len() + 1 || shape[1..] != spec.input_shape[..] {
        let mut expected = vec![0];
        expected.extend_from_slice(&spec.input_shape);
        return Err(Error::ShapeMismatch {
            op: "forward",
            lhs: expected,
            rhs: shape.to_vec(),
        });
    }
    Ok(shape[0])
}

/// im2col indices for a same-padded 3×3 convolution over NHWC data.
fn im2col_index(b: usize, h: usize, w: usize, c: usize) -> Arc<[usize]> {
    let mut idx = Vec::with_capacity(b * h * w * 9 * c);
    for n in 0..b {
        for y in 0..h {
            for x in 0..w {
                for ky in 0..3 {
                    for kx in 0..3 {
                        let yy = y as isize + ky as isize - 1;
                        let xx = x as isize + kx as isize - 1;
                        let inside = yy >= 0 && xx >= 0 && (yy as usize) < h && (xx as usize) < w;
                        for ch in 0..c {
                            idx.push(if inside {
                                ((n * h + yy as usize) * w + xx as usize) * c + ch
                            } else {
                                NO_INDEX
                            });
                        }
                    }
                }
            }
        }
    }
    idx.into()
}

/// Scatter targets for 2×2 average pooling; trailing odd rows/cols are dropped.
fn pool_index(b: usize, h: usize, w: usize, c: usize) -> Arc<[usize]> {
    let (ho, wo) = (h / 2, w / 2);
    let mut idx = Vec::with_capacity(b * h * w * c);
    for n in 0..b {
        for y in 0..h {
            for x in 0..w {
                for ch in 0..c {
                    let (py, px) = (y / 2, x / 2);
                    idx.push(if py < ho && px < wo {
                        ((n * ho + py) * wo + px) * c + ch
                    } else {
                        NO_INDEX
                    });
                }
            }
        }
    }
    idx.into()
}

/// Logits `[B, C]` for a `[B, ..input_shape]` batch node.
///
/// `params` holds one node per layout entry, in layout order.
pub fn forward<T: Scalar>(
    graph: &mut Graph<T>,
    spec: &ModelSpec,
    params: &[NodeId],
    batch: NodeId,
) -> Result<NodeId> {
    let b = check_batch(spec, graph, batch)?;
    let layout = spec.layout();
    if params.len() != layout.len() {
        return Err(Error::InvalidArgument(format!(
            "{} parameter nodes for {} layout entries",
            params.len(),
            layout.len()
        )));
    }
    for (&p, e) in params.iter().zip(&layout) {
        if graph.shape(p) != e.shape.as_slice() {
            return Err(Error::ShapeMismatch {
                op: "forward",
                lhs: e.shape.clone(),
                rhs: graph.shape(p).to_vec(),
            });
        }
    }
    let layers: Vec<(NodeId, NodeId)> = params.chunks(2).map(|p| (p[0], p[1])).collect();

    match spec.kind {
        ModelKind::Mlp => {
            let mut h = graph.reshape(batch, &[b, spec.input_len()])?;
            for (i, &(w, bias)) in layers.iter().enumerate() {
                let z = graph.matmul(h, w)?;
                h = graph.add_row_bias(z, bias)?;
                if i + 1 < layers.len() {
                    h = graph.relu(h)?;
                }
            }
            Ok(h)
        }
        ModelKind::Cnn => {
            let (mut hgt, mut wid, mut cin) = (spec.input_shape[0], spec.input_shape[1], 1);
            let mut h = batch;
            let (fc, convs) = layers.split_last().expect("cnn has a classifier");
            for &(w, bias) in convs {
                let cout = graph.shape(w)[1];
                let rows = b * hgt * wid;
                let cols = graph.gather(h, im2col_index(b, hgt, wid, cin), &[rows, 9 * cin])?;
                let z = graph.matmul(cols, w)?;
                let z = graph.add_row_bias(z, bias)?;
                let a = graph.relu(z)?;
                let (ho, wo) = (hgt / 2, wid / 2);
                let pooled = graph.scatter_add(a, pool_index(b, hgt, wid, cout), &[b * ho * wo, cout])?;
                h = graph.mul_const(pooled, 0.25)?;
                (hgt, wid, cin) = (ho, wo, cout);
            }
            let flat = graph.reshape(h, &[b, hgt * wid * cin])?;
            let z = graph.matmul(flat, fc.0)?;
            graph.add_row_bias(z, fc.1)
        }
    }
}

/// Forward pass outside of any caller graph.
pub fn forward_values<T: Scalar>(
    spec: &ModelSpec,
    params: &NetworkParams<T>,
    batch: &Tensor<T>,
) -> Result<Tensor<T>> {
    if params.layout() != spec.layout().as_slice() {
        return Err(Error::InvalidArgument(
            "parameter layout does not match the model spec".into(),
        ));
    }
    let mut g = Graph::new();
    let nodes = params.to_graph(&mut g, false)?;
    let x = g.constant(batch.clone())?;
    let logits = forward(&mut g, spec, &nodes, x)?;
    Ok(g.value(logits).clone())
}

/// Mean softmax cross-entropy; the `ℓ` minimised by every training loop.
pub fn classification_loss<T: Scalar>(
    graph: &mut Graph<T>,
    logits: NodeId,
    labels: &[usize],
) -> Result<NodeId> {
    graph.softmax_cross_entropy(logits, labels)
}

/// Index of the largest entry; the lowest index wins ties.
pub fn argmax<T: Scalar>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

/// Fraction of rows whose argmax equals the label.
pub fn accuracy<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<f64> {
    let hits = correct_count(logits, labels)?;
    Ok(hits as f64 / labels.len() as f64)
}

pub(crate) fn correct_count<T: Scalar>(logits: &Tensor<T>, labels: &[usize]) -> Result<usize> {
    if labels.is_empty() {
        return Err(Error::EmptyBatch);
    }
    if logits.rank() != 2 || logits.shape()[0] != labels.len() {
        return Err(Error::ShapeMismatch {
            op: "accuracy",
            lhs: logits.shape().to_vec(),
            rhs: vec![labels.len()],
        });
    }
    let c = logits.shape()[1];
    Ok(logits
        .data()
        .chunks_exact(c)
        .zip(labels)
        .filter(|(row, &y)| argmax(row) == y)
        .count())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn tiny_mlp() -> ModelSpec {
        ModelSpec::mlp(vec![4], 3, vec![5])
    }

    fn random_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        Tensor::new(
            shape.to_vec(),
            (0..numel(shape)).map(|_| rng.gen_range(-1.0..1.0)).collect(),
        )
        .unwrap()
    }

    #[test]
    fn widar_sized_mlp_parameter_count() {
        let spec = ModelSpec::mlp(vec![22, 20, 20], 6, vec![256, 256]);
        assert_eq!(
            spec.param_count(),
            8800 * 256 + 256 + 256 * 256 + 256 + 256 * 6 + 6
        );
        assert_eq!(spec.param_count(), 2_320_390);
    }

    #[test]
    fn init_is_deterministic_and_bounded() {
        let spec = ModelSpec::mlp(vec![10], 3, vec![8]);
        let a = init_params::<f32>(&spec, 9).unwrap();
        let b = init_params::<f32>(&spec, 9).unwrap();
        assert!(a.flat().bit_eq(b.flat()));
        let c = init_params::<f32>(&spec, 10).unwrap();
        assert!(!a.flat().bit_eq(c.flat()));
        let bound = (6.0f32 / 18.0).sqrt();
        let t = a.tensors();
        assert!(t[0].data().iter().all(|v| v.abs() <= bound));
        assert!(t[1].data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_init_is_all_zero() {
        let p = init_zero::<f64>(&tiny_mlp()).unwrap();
        assert!(p.values().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn logits_shape_and_zero_params() {
        let spec = ModelSpec::mlp(vec![3, 2], 6, vec![7]);
        let x = random_tensor(&[4, 3, 2], 1);
        let p = init_params::<f64>(&spec, 1).unwrap();
        assert_eq!(forward_values(&spec, &p, &x).unwrap().shape(), &[4, 6]);
        let z = init_zero::<f64>(&spec).unwrap();
        let logits = forward_values(&spec, &z, &x).unwrap();
        for row in logits.data().chunks(6) {
            assert!(row.iter().all(|&v| v == row[0]));
        }
    }

    #[test]
    fn identical_rows_give_identical_logits() {
        let spec = ModelSpec::cnn(vec![6, 8], 3, vec![2, 3]);
        let row = random_tensor(&[1, 6, 8], 5);
        let mut data = row.to_vec();
        data.extend_from_slice(row.data());
        let x = Tensor::new(vec![2, 6, 8], data).unwrap();
        let p = init_params::<f64>(&spec, 2).unwrap();
        let logits = forward_values(&spec, &p, &x).unwrap();
        assert_eq!(logits.shape(), &[2, 3]);
        assert_eq!(logits.row(0), logits.row(1));
    }

    #[test]
    fn forward_rejects_wrong_input_shape() {
        let spec = tiny_mlp();
        let p = init_params::<f64>(&spec, 0).unwrap();
        let err = forward_values(&spec, &p, &random_tensor(&[2, 5], 0)).unwrap_err();
        assert!(matches!(err, Error::ShapeMismatch { .. }));
    }

    #[test]
    fn loss_fixtures() {
        let mut g = Graph::<f64>::new();
        let z = g.constant(Tensor::zeros(&[1, 6])).unwrap();
        let l = classification_loss(&mut g, z, &[3]).unwrap();
        assert!((g.value(l).item() - 6f64.ln()).abs() < 1e-12);

        let mut sat = vec![0.0; 6];
        sat[2] = 30.0;
        let z = g.constant(Tensor::from_f64(vec![1, 6], &sat).unwrap()).unwrap();
        let l = classification_loss(&mut g, z, &[2]).unwrap();
        assert!(g.value(l).item() < 1e-9);

        assert!(matches!(
            classification_loss(&mut g, z, &[6]),
            Err(Error::LabelOutOfRange { label: 6, classes: 6 })
        ));
    }

    #[test]
    fn batch_loss_is_mean_of_sample_losses() {
        let rows = [[0.3, -1.2, 2.0], [1.0, 0.5, -0.5]];
        let labels = [2usize, 1];
        // per-sample oracle: log-sum-exp minus the label logit
        let per: Vec<f64> = rows
            .iter()
            .zip(labels)
            .map(|(r, y)| r.iter().map(|v: &f64| v.exp()).sum::<f64>().ln() - r[y])
            .collect();
        let mut g = Graph::<f64>::new();
        let z = g
            .constant(Tensor::from_f64(vec![2, 3], &rows.concat()).unwrap())
            .unwrap();
        let l = classification_loss(&mut g, z, &labels).unwrap();
        assert!((g.value(l).item() - (per[0] + per[1]) / 2.0).abs() < 1e-12);
    }

    #[test]
    fn accuracy_rules() {
        let logits = Tensor::<f64>::from_f64(vec![3, 2], &[1., 0., 0., 1., 2., 1.]).unwrap();
        assert_eq!(accuracy(&logits, &[0, 1, 0]).unwrap(), 1.0);
        let tie = Tensor::<f64>::zeros(&[4, 3]);
        assert_eq!(accuracy(&tie, &[0, 1, 0, 2]).unwrap(), 0.5);
        assert!(matches!(accuracy(&tie, &[]), Err(Error::EmptyBatch)));
    }

    #[test]
    fn random_logits_accuracy_near_chance() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let b = 6000;
        let logits = Tensor::<f64>::new(
            vec![b, 6],
            (0..b * 6).map(|_| rng.gen::<f64>()).collect(),
        )
        .unwrap();
        let labels: Vec<usize> = (0..b).map(|_| rng.gen_range(0..6)).collect();
        let acc = accuracy(&logits, &labels).unwrap();
        assert!((acc - 1.0 / 6.0).abs() < 0.02, "{acc}");
    }

    #[test]
    fn mlp_loss_gradient_matches_finite_differences() {
        // 4 -> 3 -> 2 with C = 2: 4*3+3+3*2+2 = 23 parameters
        let spec = ModelSpec::mlp(vec![4], 2, vec![3]);
        let params = init_params::<f64>(&spec, 4).unwrap();
        let x = random_tensor(&[5, 4], 8);
        let labels = [0, 1, 1, 0, 1];
        let mut g = Graph::new();
        let nodes = params.to_graph(&mut g, true).unwrap();
        let xb = g.constant(x).unwrap();
        let logits = forward(&mut g, &spec, &nodes, xb).unwrap();
        let loss = classification_loss(&mut g, logits, &labels).unwrap();
        for &p in &nodes {
            let err = g.fd_check(loss, p, 1e-5).unwrap();
            assert!(err < 1e-6, "{err}");
        }
    }

    #[test]
    fn cnn_loss_gradient_matches_finite_differences() {
        let spec = ModelSpec::cnn(vec![4, 6], 3, vec![2]);
        let params = init_params::<f64>(&spec, 11).unwrap();
        let mut g = Graph::new();
        let nodes = params.to_graph(&mut g, true).unwrap();
        let x = g.leaf(random_tensor(&[2, 4, 6], 3)).unwrap();
        let logits = forward(&mut g, &spec, &nodes, x).unwrap();
        let loss = classification_loss(&mut g, logits, &[2, 0]).unwrap();
        for &p in nodes.iter().chain([&x]) {
            let err = g.fd_check(loss, p, 1e-5).unwrap();
            assert!(err < 1e-6, "{err}");
        }
    }
}
