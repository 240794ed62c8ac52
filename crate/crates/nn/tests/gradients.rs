use std::sync::Arc;

use epiflow_nn::{Activation, Dense, EdgeInput, GraphKind, GraphLayer, ParamSet, Tape, Var};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
const REL_TOL: f64 = 1e-4;

fn random(rng: &mut ChaCha8Rng, rows: usize, cols: usize, lo: f64, hi: f64) -> Array2<f64> {
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(lo..hi))
}

/// Random stacked flows; roughly a third of the rows ask for more than `movable`.
fn random_flows(rng: &mut ChaCha8Rng, b: usize, k: usize, movable: &[f64]) -> Array2<f64> {
    let mut m = Array2::zeros((b * k, k));
    for r in 0..b * k {
        let scale = if rng.random_bool(0.3) { 1.5 } else { 0.6 };
        for j in 0..k {
            if j != r % k && rng.random_bool(0.7) {
                m[[r, j]] = rng.random_range(0.1..1.0) * scale * movable[r] / k as f64;
            }
        }
    }
    m
}

#[derive(Clone, Copy, PartialEq)]
enum Leaf {
    Constant,
    Dense,
    /// Only existing edges are perturbed; a zero entry sits on a change of graph structure.
    Edges,
}

/// Checks the analytic gradient of `Σ C ⊙ build(leaves)` against central differences for every
/// differentiable leaf. Returns the worst relative error.
fn check<F>(leaves: &[Array2<f64>], kinds: &[Leaf], build: F, rng: &mut ChaCha8Rng) -> f64
where
    F: Fn(&mut Tape, &[Var]) -> Var,
{
    let differentiable: Vec<bool> = kinds.iter().map(|k| *k != Leaf::Constant).collect();
    let bind = |tape: &mut Tape, values: &[Array2<f64>]| -> Vec<Var> {
        values
            .iter()
            .zip(&differentiable)
            .map(|(v, d)| if *d { tape.param(v.clone()) } else { tape.input(v.clone()) })
            .collect()
    };
    let mut tape = Tape::new();
    let vars = bind(&mut tape, leaves);
    let out = build(&mut tape, &vars);
    let weights = random(rng, tape.value(out).nrows(), tape.value(out).ncols(), -1.0, 1.0);
    let grads = tape.backward(out, weights.clone()).unwrap();

    let loss = |values: &[Array2<f64>]| -> f64 {
        let mut t = Tape::new();
        let v = bind(&mut t, values);
        let o = build(&mut t, &v);
        (t.value(o) * &weights).sum()
    };
    let mut worst: f64 = 0.0;
    for (idx, leaf) in leaves.iter().enumerate() {
        if !differentiable[idx] {
            continue;
        }
        let analytic = grads.get_or_zeros(vars[idx], leaf.dim());
        for pos in 0..leaf.len() {
            let (r, c) = (pos / leaf.ncols(), pos % leaf.ncols());
            if kinds[idx] == Leaf::Edges && leaf[[r, c]] == 0.0 {
                continue;
            }
            let mut plus = leaves.to_vec();
            plus[idx][[r, c]] += STEP;
            let mut minus = leaves.to_vec();
            minus[idx][[r, c]] -= STEP;
            let numeric = (loss(&plus) - loss(&minus)) / (2.0 * STEP);
            let a = analytic[[r, c]];
            let err = (a - numeric).abs() / a.abs().max(numeric.abs()).max(1e-2);
            worst = worst.max(err);
        }
    }
    worst
}

fn graph_case(kind: GraphKind, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let b = rng.random_range(1..=2);
    let k = rng.random_range(2..=4);
    let (fin, fout) = (rng.random_range(1..=3), rng.random_range(1..=3));
    let act = [Activation::Tanh, Activation::Sigmoid, Activation::Identity][rng.random_range(0..3)];
    let mut params = ParamSet::new();
    let layer = GraphLayer::new(&mut params, "g", kind, fin, fout, act, &mut rng);
    let movable: Vec<f64> = (0..b * k).map(|_| rng.random_range(5.0..20.0)).collect();
    let mut flows = random_flows(&mut rng, b, k, &movable);
    if kind == GraphKind::Softmax {
        flows.mapv_inplace(|v| v / 4.0);
    }
    let mut leaves = vec![random(&mut rng, b * k, fin, -1.0, 1.0), flows];
    let mut bias = params.tensors()[layer.bias].clone();
    bias.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    leaves.push(params.tensors()[layer.weight].clone());
    leaves.push(bias);
    // The neighbour-mean structure is constant in the flows.
    let flow_kind = if kind == GraphKind::Mean { Leaf::Constant } else { Leaf::Edges };
    let mut l = layer.clone();
    l.weight = 0;
    l.bias = 1;
    check(
        &leaves,
        &[Leaf::Dense, flow_kind, Leaf::Dense, Leaf::Dense],
        |tape, v| {
            let edges = EdgeInput {
                flow: v[1],
                movable: movable.clone(),
            };
            l.forward(tape, &[v[2], v[3]], v[0], &edges).unwrap()
        },
        &mut rng,
    )
}

#[test]
fn flow_layer_matches_finite_differences() {
    for seed in 0..50 {
        let err = graph_case(GraphKind::Flow, seed);
        assert!(err <= REL_TOL, "seed {seed}: relative error {err}");
    }
}

#[test]
fn mean_layer_matches_finite_differences() {
    for seed in 0..50 {
        let err = graph_case(GraphKind::Mean, 1000 + seed);
        assert!(err <= REL_TOL, "seed {seed}: relative error {err}");
    }
}

#[test]
fn softmax_layer_matches_finite_differences() {
    for seed in 0..50 {
        let err = graph_case(GraphKind::Softmax, 2000 + seed);
        assert!(err <= REL_TOL, "seed {seed}: relative error {err}");
    }
}

#[test]
fn dense_layer_matches_finite_differences() {
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(3000 + seed);
        let (n, fin, fout) = (rng.random_range(1..5), rng.random_range(1..5), rng.random_range(1..5));
        let act = [Activation::Tanh, Activation::Sigmoid, Activation::Identity][rng.random_range(0..3)];
        let mut params = ParamSet::new();
        let mut dense = Dense::new(&mut params, "d", fin, fout, act, &mut rng);
        let leaves = vec![
            random(&mut rng, n, fin, -1.0, 1.0),
            params.tensors()[0].clone(),
            random(&mut rng, 1, fout, -0.5, 0.5),
        ];
        dense.weight = 0;
        dense.bias = 1;
        let err = check(
            &leaves,
            &[Leaf::Dense; 3],
            |tape, v| dense.forward(tape, &v[1..], v[0]).unwrap(),
            &mut rng,
        );
        assert!(err <= REL_TOL, "seed {seed}: relative error {err}");
    }
}

#[test]
fn edge_and_readout_ops_match_finite_differences() {
    for seed in 0..50 {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + seed);
        let b = rng.random_range(1..=3);
        let k = rng.random_range(2..=4);
        let demand = Arc::new(random(&mut rng, b * k, k, 0.0, 2.0));
        let leaves = vec![
            random(&mut rng, b * k, 1, -1.0, 1.0),
            random(&mut rng, b * k, 1, -1.0, 1.0),
            random(&mut rng, 1, 1, -1.0, 1.0),
            random(&mut rng, 1, 1, -1.0, 1.0),
        ];
        let err = check(
            &leaves,
            &[Leaf::Dense; 4],
            |tape, v| {
                let pair = tape.pair_sum(v[0], v[1], k).unwrap();
                let d = tape.scale_const(v[2], Arc::clone(&demand)).unwrap();
                let z = tape.add(pair, d).unwrap();
                let z = tape.add_bias(z, v[3]).unwrap();
                let p = tape.activation(z, Activation::Sigmoid);
                let restricted = tape.affine(p, -1.0, 1.0);
                let restricted = tape.mul_const(restricted, Arc::clone(&demand)).unwrap();
                let rows = tape.row_sum(restricted);
                let both = tape.concat_cols(rows, v[0]).unwrap();
                tape.segment_mean(both, k).unwrap()
            },
            &mut rng,
        );
        assert!(err <= REL_TOL, "seed {seed}: relative error {err}");
    }
}

#[test]
fn zero_upstream_gives_zero_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let mut params = ParamSet::new();
    let layer = GraphLayer::new(&mut params, "g", GraphKind::Flow, 2, 3, Activation::Relu, &mut rng);
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape);
    let f = tape.param(random(&mut rng, 3, 2, -1.0, 1.0));
    let flow = tape.input(random_flows(&mut rng, 1, 3, &[10.0; 3]));
    let out = layer
        .forward(&mut tape, &bound, f, &EdgeInput { flow, movable: vec![10.0; 3] })
        .unwrap();
    let grads = tape.backward(out, Array2::zeros((3, 3))).unwrap();
    for g in params.gradients(&bound, &grads) {
        assert!(g.iter().all(|v| *v == 0.0));
    }
}

#[test]
fn linear_layer_weight_gradient_is_outer_product() {
    let mut tape = Tape::new();
    let x = Array2::from_shape_vec((1, 3), vec![0.5, -1.0, 2.0]).unwrap();
    let xv = tape.input(x.clone());
    let w = tape.param(Array2::from_elem((3, 2), 0.1));
    let out = tape.matmul(xv, w).unwrap();
    let upstream = Array2::from_shape_vec((1, 2), vec![3.0, -4.0]).unwrap();
    let grads = tape.backward(out, upstream.clone()).unwrap();
    assert_eq!(grads.get(w).unwrap(), &x.t().dot(&upstream));
}

#[test]
fn non_finite_gradient_reports_layer() {
    let mut tape = Tape::new();
    tape.set_scope(Some(3));
    let x = tape.param(Array2::from_elem((1, 1), 1.0));
    let y = tape.affine(x, 2.0, 0.0);
    let err = tape.backward(y, Array2::from_elem((1, 1), f64::NAN)).unwrap_err();
    assert!(err.to_string().contains("layer 3"), "{err}");
}
