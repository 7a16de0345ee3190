use super::{Graph, NodeId};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

impl Graph<f64> {
    /// Central-difference check of `∂loss/∂leaf`.
    ///
    /// Returns `max |analytic − numeric| / max(1, |numeric|)` over the leaf's
    /// elements. The analytic gradient is appended to the graph via
    /// [`Graph::backward`]; the numeric estimate replays the graph with the
    /// leaf perturbed by `±epsilon`, one element at a time.
    pub fn fd_check(&mut self, loss: NodeId, leaf: NodeId, epsilon: f64) -> Result<f64> {
        if !(epsilon > 0.0 && epsilon <= 1e-2) {
            return Err(Error::InvalidArgument(format!(
                "finite-difference epsilon {epsilon} outside (0, 1e-2]"
            )));
        }
        let grad = self.backward(loss, &[leaf])?[0];
        let analytic = self.value(grad).clone();
        let numeric = self.numeric_gradient(loss, leaf, epsilon)?;
        Ok(analytic
            .data()
            .iter()
            .zip(&numeric)
            .map(|(&a, &n)| (a - n).abs() / n.abs().max(1.0))
            .fold(0.0, f64::max))
    }

    /// Central-difference gradient of `loss` with respect to `leaf`.
    pub fn numeric_gradient(&self, loss: NodeId, leaf: NodeId, epsilon: f64) -> Result<Vec<f64>> {
        if !self.is_leaf(leaf) {
            return Err(Error::NotALeaf(leaf.index()));
        }
        let base = self.value(leaf).clone();
        let mut bindings = self.leaf_bindings();
        let mut out = Vec::with_capacity(base.len());
        for i in 0..base.len() {
            let mut probe = |delta: f64| -> Result<f64> {
                let mut data = base.to_vec();
                data[i] += delta;
                bindings.insert(leaf, Tensor::from_parts(base.shape().to_vec(), data));
                let values = self.eval_through(&bindings, loss)?;
                Ok(values[loss.index()].item())
            };
            let plus = probe(epsilon)?;
            let minus = probe(-epsilon)?;
            out.push((plus - minus) / (2.0 * epsilon));
        }
        Ok(out)
    }
}
