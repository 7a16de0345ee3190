use super::{Graph, NodeId, Op};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

impl<T: Scalar> Graph<T> {
    /// Gradient nodes of a scalar `loss` with respect to graph leaves.
    ///
    /// The returned nodes are regular members of this graph and can be
    /// differentiated again.
    pub fn backward(&mut self, loss: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        for &w in wrt {
            self.check(w)?;
            if !self.is_leaf(w) {
                return Err(Error::NotALeaf(w.0));
            }
        }
        self.grad(loss, wrt)
    }

    /// Gradient nodes of a scalar `loss` with respect to arbitrary nodes.
    ///
    /// Each target is treated as an independent input: the result is the
    /// adjoint of that node, holding everything upstream of it fixed. Only
    /// nodes lying on a path from some target to `loss` receive adjoints, so
    /// differentiating with respect to a late intermediate does not re-walk
    /// the part of the graph that produced it.
    pub fn grad(&mut self, loss: NodeId, wrt: &[NodeId]) -> Result<Vec<NodeId>> {
        self.check(loss)?;
        for &w in wrt {
            self.check(w)?;
        }
        if self.value(loss).len() != 1 {
            return Err(Error::NonScalarLoss(self.shape(loss).to_vec()));
        }
        let Some(start) = wrt.iter().map(|w| w.0).min() else {
            return Ok(Vec::new());
        };
        let end = loss.0 + 1;

        // depends[i - start]: node i is reachable from a target.
        let mut depends = vec![false; end.saturating_sub(start)];
        for &w in wrt {
            if w.0 < end {
                depends[w.0 - start] = true;
            }
        }
        for i in start..end {
            if !depends[i - start] {
                depends[i - start] = self.nodes[i]
                    .op
                    .inputs()
                    .iter()
                    .any(|j| j.0 >= start && depends[j.0 - start]);
            }
        }
        let reaches = |j: NodeId| j.0 >= start && j.0 < end && depends[j.0 - start];

        let mut adjoint: Vec<Option<NodeId>> = vec![None; end - start];
        if reaches(loss) {
            let seed = Tensor::full(self.shape(loss), T::one());
            adjoint[loss.0 - start] = Some(self.constant(seed)?);
        }

        for i in (start..end).rev() {
            let Some(g) = adjoint[i - start] else { continue };
            let op = self.nodes[i].op.clone();
            let out = NodeId(i);
            let mut contribs: Vec<(NodeId, NodeId)> = Vec::new();
            match op {
                Op::Leaf | Op::Constant | Op::StepMask(_) => {}
                Op::Add(a, b) => {
                    if reaches(a) {
                        contribs.push((a, g));
                    }
                    if reaches(b) {
                        contribs.push((b, g));
                    }
                }
                Op::Sub(a, b) => {
                    if reaches(a) {
                        contribs.push((a, g));
                    }
                    if reaches(b) {
                        contribs.push((b, self.neg(g)?));
                    }
                }
                Op::Mul(a, b) => {
                    if reaches(a) {
                        contribs.push((a, self.mul(g, b)?));
                    }
                    if reaches(b) {
                        contribs.push((b, self.mul(g, a)?));
                    }
                }
                Op::MulConst(x, c) => {
                    if reaches(x) {
                        contribs.push((x, self.mul_const(g, c.as_f64())?));
                    }
                }
                Op::Scale { x, s } => {
                    if reaches(x) {
                        contribs.push((x, self.scale(g, s)?));
                    }
                    if reaches(s) {
                        let gx = self.mul(g, x)?;
                        let total = self.sum(gx)?;
                        contribs.push((s, self.conform(total, s)?));
                    }
                }
                Op::MatMul { a, b, ta, tb } => {
                    if reaches(a) {
                        let da = if ta {
                            self.matmul_t(b, g, tb, true)?
                        } else {
                            self.matmul_t(g, b, false, !tb)?
                        };
                        contribs.push((a, da));
                    }
                    if reaches(b) {
                        let db = if tb {
                            self.matmul_t(g, a, true, ta)?
                        } else {
                            self.matmul_t(a, g, !ta, false)?
                        };
                        contribs.push((b, db));
                    }
                }
                Op::Relu(x) => {
                    if reaches(x) {
                        let mask = self.step_mask(x)?;
                        contribs.push((x, self.mul(g, mask)?));
                    }
                }
                Op::Reshape(x) => {
                    if reaches(x) {
                        let shape = self.shape(x).to_vec();
                        contribs.push((x, self.reshape(g, &shape)?));
                    }
                }
                Op::Sum(x) => {
                    if reaches(x) {
                        let shape = self.shape(x).to_vec();
                        contribs.push((x, self.broadcast(g, &shape)?));
                    }
                }
                Op::Mean(x) => {
                    if reaches(x) {
                        let shape = self.shape(x).to_vec();
                        let n = self.value(x).len() as f64;
                        let b = self.broadcast(g, &shape)?;
                        contribs.push((x, self.mul_const(b, 1.0 / n)?));
                    }
                }
                Op::Broadcast(s) => {
                    if reaches(s) {
                        let total = self.sum(g)?;
                        contribs.push((s, self.conform(total, s)?));
                    }
                }
                Op::SumRows(x) => {
                    if reaches(x) {
                        let m = self.shape(x)[0];
                        contribs.push((x, self.tile_rows(g, m)?));
                    }
                }
                Op::TileRows(x) => {
                    if reaches(x) {
                        contribs.push((x, self.sum_rows(g)?));
                    }
                }
                Op::SumCols(x) => {
                    if reaches(x) {
                        let n = self.shape(x)[1];
                        contribs.push((x, self.tile_cols(g, n)?));
                    }
                }
                Op::TileCols(x) => {
                    if reaches(x) {
                        contribs.push((x, self.sum_cols(g)?));
                    }
                }
                Op::Softmax(x) => {
                    if reaches(x) {
                        // p ⊙ (g − rowsum(g ⊙ p))
                        let n = self.shape(x)[1];
                        let gp = self.mul(g, out)?;
                        let rows = self.sum_cols(gp)?;
                        let tiled = self.tile_cols(rows, n)?;
                        let centered = self.sub(g, tiled)?;
                        contribs.push((x, self.mul(out, centered)?));
                    }
                }
                Op::SoftmaxCrossEntropy { logits, labels } => {
                    if reaches(logits) {
                        // (softmax(z) − onehot(y)) / B, scaled by the upstream scalar.
                        let (b, c) = (self.shape(logits)[0], self.shape(logits)[1]);
                        let mut onehot = vec![T::zero(); b * c];
                        for (r, &y) in labels.iter().enumerate() {
                            onehot[r * c + y] = T::one();
                        }
                        let onehot = self.constant(Tensor::from_parts(vec![b, c], onehot))?;
                        let p = self.softmax(logits)?;
                        let diff = self.sub(p, onehot)?;
                        let diff = self.mul_const(diff, 1.0 / b as f64)?;
                        contribs.push((logits, self.scale(diff, g)?));
                    }
                }
                Op::Gather { x, index } => {
                    if reaches(x) {
                        let shape = self.shape(x).to_vec();
                        contribs.push((x, self.scatter_add(g, index, &shape)?));
                    }
                }
                Op::ScatterAdd { x, index } => {
                    if reaches(x) {
                        let shape = self.shape(x).to_vec();
                        contribs.push((x, self.gather(g, index, &shape)?));
                    }
                }
            }
            for (target, c) in contribs {
                let slot = &mut adjoint[target.0 - start];
                *slot = Some(match *slot {
                    None => c,
                    Some(prev) => self.add(prev, c)?,
                });
            }
        }

        wrt.iter()
            .map(|&w| match adjoint.get(w.0.wrapping_sub(start)).copied().flatten() {
                Some(g) if w.0 < end => Ok(g),
                _ => self.constant(Tensor::zeros(self.shape(w))),
            })
            .collect()
    }

    /// Reshapes a one-element node to the shape of `like` if they differ.
    fn conform(&mut self, x: NodeId, like: NodeId) -> Result<NodeId> {
        if self.shape(x) == self.shape(like) {
            Ok(x)
        } else {
            let shape = self.shape(like).to_vec();
            self.reshape(x, &shape)
        }
    }
}
