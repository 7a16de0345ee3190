//! Append-only computation graph with tape-based reverse-mode differentiation.
//!
//! Nodes are evaluated eagerly as they are appended, so every node carries its
//! value. [`Graph::eval`] replays the recorded operations with new leaf
//! bindings without touching the stored values.
//!
//! The backward pass (see [`Graph::grad`]) emits ordinary graph nodes drawn
//! from the same primitive vocabulary as the forward pass. Gradients are
//! therefore differentiable themselves, which is what makes gradients through
//! unrolled optimisation steps possible.

mod backward;
mod gradcheck;
mod kernels;

use std::collections::HashMap;
use std::fmt;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

/// Index sentinel for [`Op::Gather`] / [`Op::ScatterAdd`] meaning "no source".
pub const NO_INDEX: usize = usize::MAX;

/// Default bound on the number of nodes a graph may hold.
pub const DEFAULT_NODE_LIMIT: usize = 1 << 24;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl fmt::Display for NodeId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "%{}", self.0)
    }
}

/// Primitive operations. Inputs always precede the node that uses them.
#[derive(Clone, Debug)]
pub enum Op<T> {
    Leaf,
    Constant,
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Mul(NodeId, NodeId),
    /// Multiplication by a compile-time constant.
    MulConst(NodeId, T),
    /// Multiplication by a one-element node.
    Scale { x: NodeId, s: NodeId },
    /// `op(a) · op(b)` where `op` optionally transposes a 2-D operand.
    MatMul { a: NodeId, b: NodeId, ta: bool, tb: bool },
    Relu(NodeId),
    /// `1` where the input is strictly positive, else `0`. Treated as locally
    /// constant by differentiation.
    StepMask(NodeId),
    Reshape(NodeId),
    Sum(NodeId),
    Mean(NodeId),
    /// Expands a one-element node to the node's shape.
    Broadcast(NodeId),
    /// `[m, n] -> [n]`
    SumRows(NodeId),
    /// `[n] -> [m, n]`
    TileRows(NodeId),
    /// `[m, n] -> [m]`
    SumCols(NodeId),
    /// `[m] -> [m, n]`
    TileCols(NodeId),
    /// Row-wise softmax of a 2-D node.
    Softmax(NodeId),
    /// Mean softmax cross-entropy of `[B, C]` logits against integer labels.
    SoftmaxCrossEntropy { logits: NodeId, labels: Arc<[usize]> },
    /// `out[i] = x[index[i]]`, zero where `index[i] == NO_INDEX`.
    Gather { x: NodeId, index: Arc<[usize]> },
    /// `out[index[i]] += x[i]`, skipping `NO_INDEX`. Adjoint of `Gather`.
    ScatterAdd { x: NodeId, index: Arc<[usize]> },
}

impl<T> Op<T> {
    pub fn name(&self) -> &'static str {
        match self {
            Op::Leaf => "leaf",
            Op::Constant => "constant",
            Op::Add(..) => "add",
            Op::Sub(..) => "sub",
            Op::Mul(..) => "mul",
            Op::MulConst(..) => "mul_const",
            Op::Scale { .. } => "scale",
            Op::MatMul { .. } => "matmul",
            Op::Relu(_) => "relu",
            Op::StepMask(_) => "step_mask",
            Op::Reshape(_) => "reshape",
            Op::Sum(_) => "sum",
            Op::Mean(_) => "mean",
            Op::Broadcast(_) => "broadcast",
            Op::SumRows(_) => "sum_rows",
            Op::TileRows(_) => "tile_rows",
            Op::SumCols(_) => "sum_cols",
            Op::TileCols(_) => "tile_cols",
            Op::Softmax(_) => "softmax",
            Op::SoftmaxCrossEntropy { .. } => "softmax_cross_entropy",
            Op::Gather { .. } => "gather",
            Op::ScatterAdd { .. } => "scatter_add",
        }
    }

    pub fn inputs(&self) -> Vec<NodeId> {
        match *self {
            Op::Leaf | Op::Constant => vec![],
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) => vec![a, b],
            Op::Scale { x, s } => vec![x, s],
            Op::MatMul { a, b, .. } => vec![a, b],
            Op::MulConst(x, _)
            | Op::Relu(x)
            | Op::StepMask(x)
            | Op::Reshape(x)
            | Op::Sum(x)
            | Op::Mean(x)
            | Op::Broadcast(x)
            | Op::SumRows(x)
            | Op::TileRows(x)
            | Op::SumCols(x)
            | Op::TileCols(x)
            | Op::Softmax(x) => vec![x],
            Op::SoftmaxCrossEntropy { logits, .. } => vec![logits],
            Op::Gather { x, .. } | Op::ScatterAdd { x, .. } => vec![x],
        }
    }
}

#[derive(Clone, Debug)]
pub struct Node<T> {
    pub op: Op<T>,
    pub value: Tensor<T>,
}

/// Append-only arena of evaluated nodes.
#[derive(Clone, Debug)]
pub struct Graph<T> {
    nodes: Vec<Node<T>>,
    leaves: Vec<NodeId>,
    limit: usize,
}

impl<T: Scalar> Default for Graph<T> {
    fn default() -> Self {
        Self::new()
    }
}

impl<T: Scalar> Graph<T> {
    pub fn new() -> Self {
        Self::with_node_limit(DEFAULT_NODE_LIMIT)
    }

    pub fn with_node_limit(limit: usize) -> Self {
        Graph {
            nodes: Vec::new(),
            leaves: Vec::new(),
            limit,
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaves(&self) -> &[NodeId] {
        &self.leaves
    }

    pub fn node(&self, id: NodeId) -> &Node<T> {
        &self.nodes[id.0]
    }

    pub fn value(&self, id: NodeId) -> &Tensor<T> {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn is_leaf(&self, id: NodeId) -> bool {
        matches!(self.nodes.get(id.0).map(|n| &n.op), Some(Op::Leaf))
    }

    fn check(&self, id: NodeId) -> Result<()> {
        if id.0 < self.nodes.len() {
            Ok(())
        } else {
            Err(Error::UnknownNode(id.0))
        }
    }

    fn push(&mut self, op: Op<T>, shape: Vec<usize>) -> Result<NodeId> {
        if self.nodes.len() >= self.limit {
            return Err(Error::InvalidArgument(format!(
                "graph node limit {} exceeded",
                self.limit
            )));
        }
        let value = kernels::compute(&op, shape, |id| &self.nodes[id.0].value);
        let id = NodeId(self.nodes.len());
        self.nodes.push(Node { op, value });
        Ok(id)
    }

    /// A differentiable input whose value can be rebound in [`Graph::eval`].
    pub fn leaf(&mut self, value: Tensor<T>) -> Result<NodeId> {
        let id = NodeId(self.nodes.len());
        if id.0 >= self.limit {
            return Err(Error::InvalidArgument("graph node limit exceeded".into()));
        }
        self.nodes.push(Node {
            op: Op::Leaf,
            value,
        });
        self.leaves.push(id);
        Ok(id)
    }

    pub fn constant(&mut self, value: Tensor<T>) -> Result<NodeId> {
        let id = NodeId(self.nodes.len());
        if id.0 >= self.limit {
            return Err(Error::InvalidArgument("graph node limit exceeded".into()));
        }
        self.nodes.push(Node {
            op: Op::Constant,
            value,
        });
        Ok(id)
    }

    fn same_shape(&self, op: &'static str, a: NodeId, b: NodeId) -> Result<Vec<usize>> {
        self.check(a)?;
        self.check(b)?;
        let (sa, sb) = (self.shape(a), self.shape(b));
        if sa != sb {
            return Err(Error::ShapeMismatch {
                op,
                lhs: sa.to_vec(),
                rhs: sb.to_vec(),
            });
        }
        Ok(sa.to_vec())
    }

    fn matrix(&self, op: &'static str, id: NodeId) -> Result<(usize, usize)> {
        self.check(id)?;
        match *self.shape(id) {
            [m, n] => Ok((m, n)),
            ref s => Err(Error::InvalidShape(format!("{op} expects a matrix, got {s:?}"))),
        }
    }

    fn one_element(&self, op: &'static str, id: NodeId) -> Result<()> {
        self.check(id)?;
        if self.value(id).len() != 1 {
            return Err(Error::InvalidShape(format!(
                "{op} expects a one-element operand, got {:?}",
                self.shape(id)
            )));
        }
        Ok(())
    }

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("add", a, b)?;
        self.push(Op::Add(a, b), s)
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("sub", a, b)?;
        self.push(Op::Sub(a, b), s)
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        let s = self.same_shape("mul", a, b)?;
        self.push(Op::Mul(a, b), s)
    }

    pub fn mul_const(&mut self, x: NodeId, c: f64) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x).to_vec();
        self.push(Op::MulConst(x, T::of(c)), s)
    }

    pub fn neg(&mut self, x: NodeId) -> Result<NodeId> {
        self.mul_const(x, -1.0)
    }

    /// `s · x` for a one-element `s`.
    pub fn scale(&mut self, x: NodeId, s: NodeId) -> Result<NodeId> {
        self.check(x)?;
        self.one_element("scale", s)?;
        let shape = self.shape(x).to_vec();
        self.push(Op::Scale { x, s }, shape)
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.matmul_t(a, b, false, false)
    }

    /// Matrix product with optional transposition of either operand.
    pub fn matmul_t(&mut self, a: NodeId, b: NodeId, ta: bool, tb: bool) -> Result<NodeId> {
        let (ar, ac) = self.matrix("matmul", a)?;
        let (br, bc) = self.matrix("matmul", b)?;
        let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
        let (k2, n) = if tb { (bc, br) } else { (br, bc) };
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape(a).to_vec(),
                rhs: self.shape(b).to_vec(),
            });
        }
        self.push(Op::MatMul { a, b, ta, tb }, vec![m, n])
    }

    pub fn relu(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x).to_vec();
        self.push(Op::Relu(x), s)
    }

    pub fn step_mask(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        let s = self.shape(x).to_vec();
        self.push(Op::StepMask(x), s)
    }

    pub fn reshape(&mut self, x: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.check(x)?;
        if numel(shape) != self.value(x).len() || shape.contains(&0) {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape(x).to_vec(),
                rhs: shape.to_vec(),
            });
        }
        self.push(Op::Reshape(x), shape.to_vec())
    }

    /// Sum of all elements, as a rank-0 node.
    pub fn sum(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        self.push(Op::Sum(x), vec![])
    }

    pub fn mean(&mut self, x: NodeId) -> Result<NodeId> {
        self.check(x)?;
        self.push(Op::Mean(x), vec![])
    }

    pub fn broadcast(&mut self, s: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.one_element("broadcast", s)?;
        if shape.contains(&0) {
            return Err(Error::InvalidShape(format!("zero extent in {shape:?}")));
        }
        self.push(Op::Broadcast(s), shape.to_vec())
    }

    pub fn sum_rows(&mut self, x: NodeId) -> Result<NodeId> {
        let (_, n) = self.matrix("sum_rows", x)?;
        self.push(Op::SumRows(x), vec![n])
    }

    pub fn sum_cols(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, _) = self.matrix("sum_cols", x)?;
        self.push(Op::SumCols(x), vec![m])
    }

    fn vector(&self, op: &'static str, x: NodeId) -> Result<usize> {
        self.check(x)?;
        match *self.shape(x) {
            [n] => Ok(n),
            ref s => Err(Error::InvalidShape(format!("{op} expects a vector, got {s:?}"))),
        }
    }

    /// Stacks a `[n]` vector `m` times into `[m, n]`.
    pub fn tile_rows(&mut self, x: NodeId, m: usize) -> Result<NodeId> {
        let n = self.vector("tile_rows", x)?;
        if m == 0 {
            return Err(Error::InvalidShape("tile_rows with zero rows".into()));
        }
        self.push(Op::TileRows(x), vec![m, n])
    }

    /// Repeats each element of a `[m]` vector across `n` columns.
    pub fn tile_cols(&mut self, x: NodeId, n: usize) -> Result<NodeId> {
        let m = self.vector("tile_cols", x)?;
        if n == 0 {
            return Err(Error::InvalidShape("tile_cols with zero columns".into()));
        }
        self.push(Op::TileCols(x), vec![m, n])
    }

    /// Adds a `[n]` bias to every row of an `[m, n]` node.
    pub fn add_row_bias(&mut self, x: NodeId, bias: NodeId) -> Result<NodeId> {
        let (m, n) = self.matrix("add_row_bias", x)?;
        let nb = self.vector("add_row_bias", bias)?;
        if nb != n {
            return Err(Error::ShapeMismatch {
                op: "add_row_bias",
                lhs: vec![m, n],
                rhs: vec![nb],
            });
        }
        let tiled = self.tile_rows(bias, m)?;
        self.add(x, tiled)
    }

    pub fn softmax(&mut self, x: NodeId) -> Result<NodeId> {
        let (m, n) = self.matrix("softmax", x)?;
        self.push(Op::Softmax(x), vec![m, n])
    }

    /// Mean softmax cross-entropy over the rows of `[B, C]` logits.
    pub fn softmax_cross_entropy(&mut self, logits: NodeId, labels: &[usize]) -> Result<NodeId> {
        let (b, c) = self.matrix("softmax_cross_entropy", logits)?;
        if labels.len() != b {
            return Err(Error::ShapeMismatch {
                op: "softmax_cross_entropy",
                lhs: vec![b, c],
                rhs: vec![labels.len()],
            });
        }
        if let Some(&label) = labels.iter().find(|&&l| l >= c) {
            return Err(Error::LabelOutOfRange { label, classes: c });
        }
        self.push(
            Op::SoftmaxCrossEntropy {
                logits,
                labels: labels.into(),
            },
            vec![],
        )
    }

    /// `out[i] = x[index[i]]` reshaped to `shape`; `NO_INDEX` entries read zero.
    pub fn gather(&mut self, x: NodeId, index: Arc<[usize]>, shape: &[usize]) -> Result<NodeId> {
        self.check(x)?;
        let len = self.value(x).len();
        if index.len() != numel(shape) || shape.contains(&0) {
            return Err(Error::InvalidShape(format!(
                "gather index of length {} for output {shape:?}",
                index.len()
            )));
        }
        if index.iter().any(|&i| i != NO_INDEX && i >= len) {
            return Err(Error::InvalidArgument(format!(
                "gather index out of range for input of {len} elements"
            )));
        }
        self.push(Op::Gather { x, index }, shape.to_vec())
    }

    /// `out[index[i]] += x[i]` into a zero tensor of `shape`.
    pub fn scatter_add(&mut self, x: NodeId, index: Arc<[usize]>, shape: &[usize]) -> Result<NodeId> {
        self.check(x)?;
        let out = numel(shape);
        if index.len() != self.value(x).len() || shape.contains(&0) {
            return Err(Error::InvalidShape(format!(
                "scatter index of length {} for input {:?}",
                index.len(),
                self.shape(x)
            )));
        }
        if index.iter().any(|&i| i != NO_INDEX && i >= out) {
            return Err(Error::InvalidArgument(format!(
                "scatter index out of range for output of {out} elements"
            )));
        }
        self.push(Op::ScatterAdd { x, index }, shape.to_vec())
    }

    /// Re-evaluates the graph with new leaf values.
    ///
    /// Every leaf must be bound. Returns the value of every node in id order.
    pub fn eval(&self, bindings: &HashMap<NodeId, Tensor<T>>) -> Result<Vec<Tensor<T>>> {
        self.eval_through(bindings, NodeId(self.nodes.len().saturating_sub(1)))
    }

    /// Like [`Graph::eval`] but stops after node `last`.
    pub fn eval_through(
        &self,
        bindings: &HashMap<NodeId, Tensor<T>>,
        last: NodeId,
    ) -> Result<Vec<Tensor<T>>> {
        for &leaf in &self.leaves {
            let bound = bindings.get(&leaf).ok_or(Error::UnboundLeaf(leaf.0))?;
            if bound.shape() != self.shape(leaf) {
                return Err(Error::ShapeMismatch {
                    op: "bind",
                    lhs: self.shape(leaf).to_vec(),
                    rhs: bound.shape().to_vec(),
                });
            }
        }
        let end = (last.0 + 1).min(self.nodes.len());
        let mut values: Vec<Tensor<T>> = Vec::with_capacity(end);
        for (i, node) in self.nodes[..end].iter().enumerate() {
            let v = match node.op {
                Op::Leaf => bindings[&NodeId(i)].clone(),
                Op::Constant => node.value.clone(),
                ref op => kernels::compute(op, node.value.shape().to_vec(), |id| &values[id.0]),
            };
            values.push(v);
        }
        Ok(values)
    }

    /// Current values of all leaves, suitable as a starting point for `eval`.
    pub fn leaf_bindings(&self) -> HashMap<NodeId, Tensor<T>> {
        self.leaves
            .iter()
            .map(|&id| (id, self.value(id).clone()))
            .collect()
    }
}
