use super::{NodeId, Op, NO_INDEX};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

fn zip_map<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>, f: impl Fn(T, T) -> T) -> Vec<T> {
    a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()
}

fn map<T: Scalar>(a: &Tensor<T>, f: impl Fn(T) -> T) -> Vec<T> {
    a.data().iter().map(|&x| f(x)).collect()
}

fn softmax_rows<T: Scalar>(x: &[T], cols: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(x.len());
    for row in x.chunks_exact(cols) {
        let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
        let start = out.len();
        let mut total = T::zero();
        for &v in row {
            let e = (v - max).exp();
            total = total + e;
            out.push(e);
        }
        for e in &mut out[start..] {
            *e = *e / total;
        }
    }
    out
}

/// Evaluates one non-leaf operation given access to its inputs' values.
pub(super) fn compute<'a, T: Scalar>(
    op: &Op<T>,
    shape: Vec<usize>,
    get: impl Fn(NodeId) -> &'a Tensor<T>,
) -> Tensor<T> {
    let data = match *op {
        Op::Leaf | Op::Constant => unreachable!("leaves and constants carry their own values"),
        Op::Add(a, b) => zip_map(get(a), get(b), |x, y| x + y),
        Op::Sub(a, b) => zip_map(get(a), get(b), |x, y| x - y),
        Op::Mul(a, b) => zip_map(get(a), get(b), |x, y| x * y),
        Op::MulConst(x, c) => map(get(x), |v| v * c),
        Op::Scale { x, s } => {
            let s = get(s).item();
            map(get(x), |v| v * s)
        }
        Op::MatMul { a, b, ta, tb } => {
            let (a, b) = (get(a), get(b));
            let (ar, ac) = (a.shape()[0], a.shape()[1]);
            let (br, bc) = (b.shape()[0], b.shape()[1]);
            let (m, k) = if ta { (ac, ar) } else { (ar, ac) };
            let n = if tb { br } else { bc };
            let sa = if ta { (1, ac as isize) } else { (ac as isize, 1) };
            let sb = if tb { (1, bc as isize) } else { (bc as isize, 1) };
            let mut c = vec![T::zero(); m * n];
            T::gemm(m, k, n, a.data(), sa, b.data(), sb, &mut c);
            c
        }
        Op::Relu(x) => map(get(x), |v| if v > T::zero() { v } else { T::zero() }),
        Op::StepMask(x) => map(get(x), |v| if v > T::zero() { T::one() } else { T::zero() }),
        Op::Reshape(x) => return get(x).reshape(shape).expect("reshape validated at build"),
        Op::Sum(x) => vec![get(x).data().iter().copied().sum()],
        Op::Mean(x) => {
            let x = get(x);
            let total: T = x.data().iter().copied().sum();
            vec![total / T::of(x.len() as f64)]
        }
        Op::Broadcast(s) => vec![get(s).item(); numel(&shape)],
        Op::SumRows(x) => {
            let x = get(x);
            let n = x.shape()[1];
            let mut out = vec![T::zero(); n];
            for row in x.data().chunks_exact(n) {
                for (o, &v) in out.iter_mut().zip(row) {
                    *o = *o + v;
                }
            }
            out
        }
        Op::TileRows(x) => {
            let x = get(x);
            let mut out = Vec::with_capacity(numel(&shape));
            for _ in 0..shape[0] {
                out.extend_from_slice(x.data());
            }
            out
        }
        Op::SumCols(x) => {
            let x = get(x);
            let n = x.shape()[1];
            x.data()
                .chunks_exact(n)
                .map(|row| row.iter().copied().sum())
                .collect()
        }
        Op::TileCols(x) => {
            let n = shape[1];
            get(x)
                .data()
                .iter()
                .flat_map(|&v| std::iter::repeat_n(v, n))
                .collect()
        }
        Op::Softmax(x) => {
            let x = get(x);
            softmax_rows(x.data(), x.shape()[1])
        }
        Op::SoftmaxCrossEntropy { logits, ref labels } => {
            let x = get(logits);
            let c = x.shape()[1];
            let mut total = T::zero();
            for (row, &label) in x.data().chunks_exact(c).zip(labels.iter()) {
                let max = row.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
                let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<T>().ln();
                total = total + (lse - row[label]);
            }
            vec![total / T::of(labels.len() as f64)]
        }
        Op::Gather { x, ref index } => {
            let x = get(x).data();
            index
                .iter()
                .map(|&i| if i == NO_INDEX { T::zero() } else { x[i] })
                .collect()
        }
        Op::ScatterAdd { x, ref index } => {
            let mut out = vec![T::zero(); numel(&shape)];
            for (&i, &v) in index.iter().zip(get(x).data()) {
                if i != NO_INDEX {
                    out[i] = out[i] + v;
                }
            }
            out
        }
    };
    Tensor::from_parts(shape, data)
}
