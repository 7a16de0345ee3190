//! Property tests for the invariants that hold for every input.

use std::sync::Arc;

use csi_distill::coreset::{herding_greedy, select, sq_dist, CoresetMethod};
use csi_distill::csi::{split, Manifest};
use csi_distill::distill::{init_synthetic, matching_loss, meta_gradient, SyntheticDataset};
use csi_distill::expert::{decode_trajectory, encode_trajectory, sample_start, train_teacher, TeacherConfig};
use csi_distill::models::{accuracy, argmax, forward, init_params, LayoutEntry, ModelSpec};
use csi_distill::{Dataset64, Graph64, NodeId, Params64, Tensor64, Trajectory32};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn config(cases: u32) -> ProptestConfig {
    ProptestConfig {
        cases,
        failure_persistence: None,
        ..ProptestConfig::default()
    }
}

// ---- autodiff ----------------------------------------------------------

#[derive(Clone, Debug)]
enum Op {
    Square,
    MulOther,
    AddOther,
    Scale(f64),
    Softmax,
    MatmulConst,
}

fn op() -> impl Strategy<Value = Op> {
    prop_oneof![
        Just(Op::Square),
        Just(Op::MulOther),
        Just(Op::AddOther),
        (-2.0..2.0f64).prop_map(Op::Scale),
        Just(Op::Softmax),
        Just(Op::MatmulConst),
    ]
}

/// Applies `ops` to leaves `x`, `y` ([2, 3]) and reduces with a weighted sum.
fn build(g: &mut Graph64, ops: &[Op], x: NodeId, y: NodeId, seed: u64) -> NodeId {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rand_tensor = |shape: &[usize]| {
        use rand::Rng;
        let n: usize = shape.iter().product();
        Tensor64::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
    };
    let mut h = x;
    for o in ops {
        h = match o {
            Op::Square => g.mul(h, h),
            Op::MulOther => g.mul(h, y),
            Op::AddOther => g.add(h, y),
            Op::Scale(c) => g.mul_const(h, *c),
            Op::Softmax => g.softmax(h),
            Op::MatmulConst => {
                let w = g.constant(rand_tensor(&[3, 3])).unwrap();
                g.matmul(h, w)
            }
        }
        .unwrap();
    }
    let w = g.constant(rand_tensor(&[2, 3])).unwrap();
    let weighted = g.mul(h, w).unwrap();
    g.sum(weighted).unwrap()
}

proptest! {
    #![proptest_config(config(48))]

    #[test]
    fn first_and_second_derivatives_match_finite_differences(
        ops in prop::collection::vec(op(), 1..=4),
        xs in prop::collection::vec(-1.0..1.0f64, 6),
        ys in prop::collection::vec(-1.0..1.0f64, 6),
        vs in prop::collection::vec(-1.0..1.0f64, 6),
        seed in any::<u64>(),
    ) {
        let mut g = Graph64::new();
        let x = g.leaf(Tensor64::new(vec![2, 3], xs).unwrap()).unwrap();
        let y = g.leaf(Tensor64::new(vec![2, 3], ys).unwrap()).unwrap();
        let loss = build(&mut g, &ops, x, y, seed);
        prop_assert!(g.fd_check(loss, x, 1e-5).unwrap() < 1e-5);
        prop_assert!(g.fd_check(loss, y, 1e-5).unwrap() < 1e-5);

        // Hessian-vector product: d/dx <∇_x loss, v>.
        let gx = g.grad(loss, &[x]).unwrap()[0];
        let v = g.constant(Tensor64::new(vec![2, 3], vs).unwrap()).unwrap();
        let gv = g.mul(gx, v).unwrap();
        let hv = g.sum(gv).unwrap();
        prop_assert!(g.fd_check(hv, x, 1e-5).unwrap() < 1e-5);
        prop_assert!(g.fd_check(hv, y, 1e-5).unwrap() < 1e-5);
    }

    #[test]
    fn evaluation_is_bit_deterministic(ops in prop::collection::vec(op(), 1..=4), seed in any::<u64>()) {
        let run = || {
            let mut g = Graph64::new();
            let x = g.leaf(Tensor64::full(&[2, 3], 0.3)).unwrap();
            let y = g.leaf(Tensor64::full(&[2, 3], -0.7)).unwrap();
            let l = build(&mut g, &ops, x, y, seed);
            let gx = g.grad(l, &[x]).unwrap()[0];
            (g.value(l).clone(), g.value(gx).clone())
        };
        let (a, b) = (run(), run());
        prop_assert!(a.0.bit_eq(&b.0) && a.1.bit_eq(&b.1));
    }
}

// ---- models ------------------------------------------------------------

fn random_batch(rows: usize, features: usize, classes: usize, seed: u64) -> (Tensor64, Vec<usize>) {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let x = (0..rows * features).map(|_| rng.gen_range(-1.0..1.0)).collect();
    let labels = (0..rows).map(|_| rng.gen_range(0..classes)).collect();
    (Tensor64::new(vec![rows, features], x).unwrap(), labels)
}

fn mlp_loss(spec: &ModelSpec, params: &Params64, x: &Tensor64, labels: &[usize]) -> (f64, f64) {
    let mut g = Graph64::new();
    let nodes = params.to_graph(&mut g, false).unwrap();
    let xb = g.constant(x.clone()).unwrap();
    let logits = forward(&mut g, spec, &nodes, xb).unwrap();
    let l = g.softmax_cross_entropy(logits, labels).unwrap();
    (g.value(l).item(), accuracy(g.value(logits), labels).unwrap())
}

proptest! {
    #![proptest_config(config(32))]

    #[test]
    fn mlp_loss_gradient_matches_finite_differences(seed in any::<u64>(), hidden in 2usize..6) {
        let spec = ModelSpec::mlp(vec![4], 3, vec![hidden]);
        prop_assume!(spec.param_count() <= 100);
        let params: Params64 = init_params(&spec, seed).unwrap();
        let (x, labels) = random_batch(5, 4, 3, seed ^ 1);
        let mut g = Graph64::new();
        let nodes = params.to_graph(&mut g, true).unwrap();
        let xb = g.constant(x).unwrap();
        let logits = forward(&mut g, &spec, &nodes, xb).unwrap();
        let loss = g.softmax_cross_entropy(logits, &labels).unwrap();
        for &n in &nodes {
            prop_assert!(g.fd_check(loss, n, 1e-6).unwrap() < 1e-5);
        }
    }

    #[test]
    fn loss_and_accuracy_are_permutation_equivariant(seed in any::<u64>(), perm_seed in any::<u64>()) {
        use rand::seq::SliceRandom;
        let spec = ModelSpec::mlp(vec![4], 3, vec![6]);
        let params: Params64 = init_params(&spec, seed).unwrap();
        let (x, labels) = random_batch(8, 4, 3, seed);
        let mut order: Vec<usize> = (0..8).collect();
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(perm_seed));
        let px = x.select_rows(&order);
        let pl: Vec<usize> = order.iter().map(|&i| labels[i]).collect();
        let (l0, a0) = mlp_loss(&spec, &params, &x, &labels);
        let (l1, a1) = mlp_loss(&spec, &params, &px, &pl);
        prop_assert!((l0 - l1).abs() < 1e-12);
        prop_assert_eq!(a0, a1);
    }

    #[test]
    fn argmax_ignores_a_common_shift(row in prop::collection::vec(-5i32..5, 1..8), shift in -100.0..100.0f64) {
        let base: Vec<f64> = row.iter().map(|&v| v as f64).collect();
        let shifted: Vec<f64> = base.iter().map(|v| v + shift.round()).collect();
        prop_assert_eq!(argmax(&base), argmax(&shifted));
    }
}

// ---- matching loss -----------------------------------------------------

fn vector(v: &[f64]) -> Params64 {
    let layout = vec![LayoutEntry { name: "v".into(), shape: vec![v.len()], offset: 0 }];
    Params64::new(v.to_vec(), layout).unwrap()
}

fn l(student: &[f64], start: &[f64], target: &[f64]) -> f64 {
    let mut g = Graph64::new();
    let s = vector(student).to_graph(&mut g, false).unwrap();
    let n = matching_loss(&mut g, &s, &vector(start), &vector(target), 1e-12).unwrap();
    g.value(n).item()
}

fn triple() -> impl Strategy<Value = (Vec<f64>, Vec<f64>, Vec<f64>, Vec<f64>)> {
    (1usize..8).prop_flat_map(|n| {
        let v = || prop::collection::vec(-4.0..4.0f64, n);
        (v(), v(), v(), v())
    })
}

proptest! {
    #![proptest_config(config(128))]

    #[test]
    fn matching_loss_is_translation_invariant((s, a, b, shift) in triple()) {
        prop_assume!(a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() > 1e-3);
        let add = |v: &[f64]| v.iter().zip(&shift).map(|(x, d)| x + d).collect::<Vec<_>>();
        let base = l(&s, &a, &b);
        let moved = l(&add(&s), &add(&a), &add(&b));
        prop_assert!((base - moved).abs() <= 1e-9 * base.max(1.0));
    }

    #[test]
    fn matching_loss_is_nonnegative_and_zero_only_at_target((s, a, b, _) in triple()) {
        prop_assume!(a.iter().zip(&b).map(|(x, y)| (x - y).powi(2)).sum::<f64>() > 1e-3);
        let v = l(&s, &a, &b);
        prop_assert!(v >= 0.0);
        prop_assert_eq!(v == 0.0, s == b);
        prop_assert_eq!(l(&b, &a, &b), 0.0);
    }
}

proptest! {
    #![proptest_config(config(12))]

    #[test]
    fn meta_gradient_matches_finite_differences(k in 1usize..=3, seed in any::<u64>()) {
        let spec = ModelSpec::mlp(vec![3], 2, vec![4]);
        let real = dataset(&[4, 4], 3, seed);
        let mut synth: SyntheticDataset<f64> = init_synthetic(&real, 2, 0.2, seed).unwrap();
        synth.alpha = 0.2;
        let start: Params64 = init_params(&spec, seed ^ 7).unwrap();
        let target: Params64 = init_params(&spec, seed ^ 9).unwrap();
        let mg = meta_gradient(&synth, &spec, &start, &target, k, 1e-12, None).unwrap();
        let loss_at = |s: &SyntheticDataset<f64>| meta_gradient(s, &spec, &start, &target, k, 1e-12, None).unwrap().loss;
        let eps = 1e-6;
        let mut numeric = Vec::new();
        for i in 0..synth.samples.len() {
            let mut hi = synth.clone();
            let mut lo = synth.clone();
            hi.samples = bump(&synth.samples, i, eps);
            lo.samples = bump(&synth.samples, i, -eps);
            numeric.push((loss_at(&hi) - loss_at(&lo)) / (2.0 * eps));
        }
        let (mut hi, mut lo) = (synth.clone(), synth.clone());
        hi.alpha += eps;
        lo.alpha -= eps;
        let numeric_alpha = (loss_at(&hi) - loss_at(&lo)) / (2.0 * eps);
        let scale = numeric.iter().fold(numeric_alpha.abs(), |m, v| m.max(v.abs()));
        let rel = |a: f64, n: f64| (a - n).abs() / n.abs().max(1e-3 * scale).max(1e-12);
        for (a, n) in mg.samples.data().iter().zip(&numeric) {
            prop_assert!(rel(*a, *n) < 1e-4, "K={k}: {a} vs {n}");
        }
        prop_assert!(rel(mg.alpha, numeric_alpha) < 1e-4, "K={k}: alpha {} vs {numeric_alpha}", mg.alpha);
    }
}

fn bump(t: &Tensor64, i: usize, d: f64) -> Tensor64 {
    let mut v = t.to_vec();
    v[i] += d;
    Tensor64::new(t.shape().to_vec(), v).unwrap()
}

// ---- coresets ----------------------------------------------------------

fn dataset(counts: &[usize], dim: usize, seed: u64) -> Dataset64 {
    use rand::Rng;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut x = Vec::new();
    let mut labels = Vec::new();
    for (c, &n) in counts.iter().enumerate() {
        for _ in 0..n {
            x.extend((0..dim).map(|_| rng.gen_range(-3.0..3.0)));
            labels.push(c);
        }
    }
    let rows = labels.len();
    Dataset64::new(
        Tensor64::new(vec![rows, dim], x).unwrap(),
        labels,
        Manifest::new(counts.len(), vec![dim], "train", "property test"),
    )
    .unwrap()
}

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn selectors_return_valid_deterministic_results(
        counts in prop::collection::vec(3usize..12, 2..5),
        spc in 1usize..=3,
        seed in any::<u64>(),
    ) {
        let ds = dataset(&counts, 3, seed);
        for m in CoresetMethod::ALL {
            let r = select(&ds, m, spc, seed).unwrap();
            prop_assert_eq!(r.indices.len(), spc * counts.len());
            let mut sorted = r.indices.clone();
            sorted.sort_unstable();
            sorted.dedup();
            prop_assert_eq!(sorted.len(), r.indices.len());
            for (c, chunk) in r.indices.chunks(spc).enumerate() {
                prop_assert!(chunk.iter().all(|&i| ds.labels()[i] == c));
            }
            prop_assert_eq!(&select(&ds, m, spc, seed).unwrap().indices, &r.indices);
        }
    }

    #[test]
    fn herding_steps_are_exhaustive_argmins(n in 2usize..=12, dim in 1usize..4, seed in any::<u64>()) {
        use rand_distr::{Distribution, StandardNormal};
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let points: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..dim).map(|_| StandardNormal.sample(&mut rng)).collect())
            .collect();
        let mu: Vec<f64> = (0..dim).map(|d| points.iter().map(|p| p[d]).sum::<f64>() / n as f64).collect();
        let gap = |set: &[usize]| {
            let m: Vec<f64> = (0..dim)
                .map(|d| set.iter().map(|&i| points[i][d]).sum::<f64>() / set.len() as f64)
                .collect();
            sq_dist(&m, &mu)
        };
        let trace = herding_greedy(&points, n);
        for k in 1..=n {
            let chosen = gap(&trace[..k]);
            for alt in (0..n).filter(|i| !trace[..k - 1].contains(i)) {
                let mut other = trace[..k - 1].to_vec();
                other.push(alt);
                prop_assert!(chosen <= gap(&other) + 1e-12, "k={k}: {alt} beats {}", trace[k - 1]);
            }
        }
        prop_assert!(gap(&trace) < 1e-20);
    }
}

// ---- data and buffers --------------------------------------------------

proptest! {
    #![proptest_config(config(64))]

    #[test]
    fn split_partitions_every_sample(
        counts in prop::collection::vec(2usize..20, 1..5),
        frac in 0.1..0.9f64,
        seed in any::<u64>(),
    ) {
        // tag each sample with its index so the halves can be traced back
        let rows: usize = counts.iter().sum();
        let mut labels = Vec::new();
        for (c, &n) in counts.iter().enumerate() {
            labels.extend(std::iter::repeat_n(c, n));
        }
        let ds = Dataset64::new(
            Tensor64::new(vec![rows, 1], (0..rows).map(|i| i as f64).collect()).unwrap(),
            labels,
            Manifest::new(counts.len(), vec![1], "all", "property test"),
        ).unwrap();
        let (train, test) = split(&ds, frac, seed).unwrap();
        let mut seen: Vec<usize> = train.samples().data().iter().chain(test.samples().data()).map(|&v| v as usize).collect();
        seen.sort_unstable();
        prop_assert_eq!(seen, (0..rows).collect::<Vec<_>>());
        for part in [&train, &test] {
            for (i, &lab) in part.labels().iter().enumerate() {
                prop_assert_eq!(ds.labels()[part.sample(i)[0] as usize], lab);
            }
        }
    }
}

fn tiny_trajectory(epochs: usize, seed: u64) -> Trajectory32 {
    let ds = dataset(&[6, 6], 4, seed).cast::<f32>();
    let mut cfg = TeacherConfig::new(ModelSpec::mlp(vec![4], 2, vec![5]), seed);
    cfg.epochs = epochs;
    cfg.batch_size = 4;
    train_teacher(&ds, &cfg).unwrap()
}

proptest! {
    #![proptest_config(config(24))]

    #[test]
    fn buffer_round_trip_preserves_every_field(epochs in 1usize..5, seed in any::<u64>()) {
        let t = tiny_trajectory(epochs, seed);
        let back: Trajectory32 = decode_trajectory(&encode_trajectory(&t).unwrap()).unwrap();
        prop_assert_eq!(back, t);
    }

    #[test]
    fn sample_start_leaves_room_for_the_lookahead(
        epochs in 1usize..8,
        t_plus_raw in 1usize..8,
        j_raw in 1usize..8,
        seed in any::<u64>(),
    ) {
        let t = tiny_trajectory(epochs, 1);
        let t_plus = t_plus_raw.min(epochs);
        let j = j_raw.min(epochs);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..20 {
            let (t0, p) = sample_start(&t, t_plus, j, &mut rng).unwrap();
            prop_assert!(t0 + j <= epochs && t0 < t_plus);
            prop_assert!(p.flat().bit_eq(t.snapshots[t0].flat()));
        }
    }
}

#[test]
fn gather_scatter_shapes_are_consistent() {
    // smoke test for the index primitives used by the CNN lowering
    let mut g = Graph64::new();
    let x = g.leaf(Tensor64::new(vec![3], vec![1.0, 2.0, 3.0]).unwrap()).unwrap();
    let idx: Arc<[usize]> = Arc::from(vec![2, 0, 2]);
    let y = g.gather(x, idx.clone(), &[3]).unwrap();
    let s = g.sum(y).unwrap();
    let gx = g.backward(s, &[x]).unwrap()[0];
    assert_eq!(g.value(gx).data(), &[1.0, 0.0, 2.0]);
}
