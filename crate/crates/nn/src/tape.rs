//! Reverse-mode differentiation over a recorded list of matrix operations.
//!
//! Graph data is batched by stacking: a batch of `B` graphs with `K` nodes each is a `(B·K, F)`
//! feature matrix, and per-graph `K×K` edge matrices are stacked the same way into `(B·K, K)`,
//! so row `b·K + i` holds the out-edges of node `i` in graph `b`.

use std::sync::Arc;

use ndarray::{s, Array2, Axis, Zip};
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct Var(usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    Identity,
    Relu,
    Sigmoid,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Relu => x.max(0.0),
            Activation::Sigmoid => 1.0 / (1.0 + (-x).exp()),
            Activation::Tanh => x.tanh(),
        }
    }

    fn derivative_at_output(self, y: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Relu => {
                if y > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Sigmoid => y * (1.0 - y),
            Activation::Tanh => 1.0 - y * y,
        }
    }
}

#[derive(Clone, Debug)]
enum Op {
    Leaf,
    MatMul(Var, Var),
    Add(Var, Var),
    AddBias(Var, Var),
    Activation(Var, Activation),
    ConcatCols(Var, Var),
    MulConst(Var, Arc<Array2<f64>>),
    Affine(Var, f64),
    ScaleConst(Var, Arc<Array2<f64>>),
    PairSum(Var, Var),
    RowSum(Var),
    SegmentMean(Var, usize),
    FlowTransport {
        f: Var,
        flow: Var,
        /// Per-row transport denominator; 0 marks a row that sends nobody.
        denom: Vec<f64>,
        /// Rows whose denominator is their own out-flow.
        clipped: Vec<bool>,
        /// Transport fractions, `(B·K, K)`.
        frac: Array2<f64>,
        /// Stay fractions; `None` where clamped at zero.
        stay: Vec<Option<f64>>,
    },
    NeighborMean {
        f: Var,
        weights: Array2<f64>,
    },
    SoftmaxAggregate {
        f: Var,
        flow: Var,
        /// `weights[b·K + i, j]` is the weight of source `j` at target `i`.
        weights: Array2<f64>,
    },
}

struct Node {
    value: Array2<f64>,
    op: Op,
    needs_grad: bool,
    scope: Option<usize>,
}

/// Gradients of one backward pass, indexed by [`Var`].
#[derive(Debug)]
pub struct Gradients {
    grads: Vec<Option<Array2<f64>>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Array2<f64>> {
        self.grads[v.0].as_ref()
    }

    /// Gradient of `v`, or zeros of `shape` when nothing flowed into it.
    pub fn get_or_zeros(&self, v: Var, shape: (usize, usize)) -> Array2<f64> {
        self.get(v).cloned().unwrap_or_else(|| Array2::zeros(shape))
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
    scope: Option<usize>,
}

impl Tape {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Tags subsequently recorded nodes with a layer index, reported by numeric errors.
    pub fn set_scope(&mut self, scope: Option<usize>) {
        self.scope = scope;
    }

    pub fn value(&self, v: Var) -> &Array2<f64> {
        &self.nodes[v.0].value
    }

    fn push(&mut self, value: Array2<f64>, op: Op, needs_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            needs_grad,
            scope: self.scope,
        });
        Var(self.nodes.len() - 1)
    }

    fn grad_of(&self, vars: &[Var]) -> bool {
        vars.iter().any(|v| self.nodes[v.0].needs_grad)
    }

    /// A constant leaf.
    pub fn input(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// A differentiable leaf.
    pub fn param(&mut self, value: Array2<f64>) -> Var {
        self.push(value, Op::Leaf, true)
    }

    fn check(&self, cond: bool, what: impl FnOnce() -> String) -> Result<()> {
        if cond {
            Ok(())
        } else {
            Err(NnError::Shape(what()))
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        self.check(va.ncols() == vb.nrows(), || {
            format!("matmul {:?} x {:?}", va.dim(), vb.dim())
        })?;
        let out = va.dot(vb);
        let g = self.grad_of(&[a, b]);
        Ok(self.push(out, Op::MatMul(a, b), g))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        self.check(va.dim() == vb.dim(), || format!("add {:?} + {:?}", va.dim(), vb.dim()))?;
        let out = va + vb;
        let g = self.grad_of(&[a, b]);
        Ok(self.push(out, Op::Add(a, b), g))
    }

    /// Adds a `(1, C)` row, or a `(1, 1)` scalar, to every row of `x`.
    pub fn add_bias(&mut self, x: Var, bias: Var) -> Result<Var> {
        let (vx, vb) = (self.value(x), self.value(bias));
        self.check(vb.nrows() == 1 && (vb.ncols() == vx.ncols() || vb.ncols() == 1), || {
            format!("bias {:?} for {:?}", vb.dim(), vx.dim())
        })?;
        let out = if vb.ncols() == 1 {
            vx + vb[[0, 0]]
        } else {
            vx + vb
        };
        let g = self.grad_of(&[x, bias]);
        Ok(self.push(out, Op::AddBias(x, bias), g))
    }

    pub fn activation(&mut self, x: Var, act: Activation) -> Var {
        if act == Activation::Identity {
            return x;
        }
        let out = self.value(x).mapv(|v| act.apply(v));
        let g = self.grad_of(&[x]);
        self.push(out, Op::Activation(x, act), g)
    }

    pub fn concat_cols(&mut self, a: Var, b: Var) -> Result<Var> {
        let (va, vb) = (self.value(a), self.value(b));
        self.check(va.nrows() == vb.nrows(), || format!("concat {:?} | {:?}", va.dim(), vb.dim()))?;
        let out = ndarray::concatenate(Axis(1), &[va.view(), vb.view()]).expect("row counts match");
        let g = self.grad_of(&[a, b]);
        Ok(self.push(out, Op::ConcatCols(a, b), g))
    }

    /// Elementwise product with a constant.
    pub fn mul_const(&mut self, x: Var, c: Arc<Array2<f64>>) -> Result<Var> {
        let vx = self.value(x);
        self.check(vx.dim() == c.dim(), || format!("mul_const {:?} * {:?}", vx.dim(), c.dim()))?;
        let out = vx * &*c;
        let g = self.grad_of(&[x]);
        Ok(self.push(out, Op::MulConst(x, c), g))
    }

    /// `alpha · x + beta`.
    pub fn affine(&mut self, x: Var, alpha: f64, beta: f64) -> Var {
        let out = self.value(x).mapv(|v| alpha * v + beta);
        let g = self.grad_of(&[x]);
        self.push(out, Op::Affine(x, alpha), g)
    }

    /// A `(1, 1)` variable times a constant matrix.
    pub fn scale_const(&mut self, scalar: Var, c: Arc<Array2<f64>>) -> Result<Var> {
        let vs = self.value(scalar);
        self.check(vs.dim() == (1, 1), || format!("scale_const needs a scalar, got {:?}", vs.dim()))?;
        let out = c.mapv(|v| v * vs[[0, 0]]);
        let g = self.grad_of(&[scalar]);
        Ok(self.push(out, Op::ScaleConst(scalar, c), g))
    }

    /// Edge scores `out[b·K + i, j] = u[b·K + i] + v[b·K + j]` from per-node `(B·K, 1)` scores.
    pub fn pair_sum(&mut self, u: Var, v: Var, k: usize) -> Result<Var> {
        let (vu, vv) = (self.value(u), self.value(v));
        self.check(
            vu.ncols() == 1 && vu.dim() == vv.dim() && k > 0 && vu.nrows() % k == 0,
            || format!("pair_sum {:?}, {:?} with K = {k}", vu.dim(), vv.dim()),
        )?;
        let n = vu.nrows();
        let mut out = Array2::zeros((n, k));
        for r in 0..n {
            let base = r - r % k;
            for j in 0..k {
                out[[r, j]] = vu[[r, 0]] + vv[[base + j, 0]];
            }
        }
        let g = self.grad_of(&[u, v]);
        Ok(self.push(out, Op::PairSum(u, v), g))
    }

    pub fn row_sum(&mut self, x: Var) -> Var {
        let out = self.value(x).sum_axis(Axis(1)).insert_axis(Axis(1));
        let g = self.grad_of(&[x]);
        self.push(out, Op::RowSum(x), g)
    }

    /// Mean over consecutive blocks of `k` rows: `(B·K, C) -> (B, C)`.
    pub fn segment_mean(&mut self, x: Var, k: usize) -> Result<Var> {
        let vx = self.value(x);
        self.check(k > 0 && vx.nrows() % k == 0, || format!("segment_mean {:?} with K = {k}", vx.dim()))?;
        let b = vx.nrows() / k;
        let mut out = Array2::zeros((b, vx.ncols()));
        for s in 0..b {
            let block = vx.slice(s![s * k..(s + 1) * k, ..]);
            out.row_mut(s).assign(&block.mean_axis(Axis(0)).expect("non-empty block"));
        }
        let g = self.grad_of(&[x]);
        Ok(self.push(out, Op::SegmentMean(x, k), g))
    }

    /// Population-transport aggregation, returning `[f_in | f_stay]`.
    ///
    /// Node `i` sends the fraction `flow[i, j] / N_i` of its features to `j` and keeps
    /// `1 − Σ_j flow[i, j] / N_i`. A row whose out-flow exceeds `N_i` is rescaled to send
    /// everything; a row with `N_i ≤ 0` or no out-flow sends nothing.
    pub fn flow_transport(&mut self, f: Var, flow: Var, movable: &[f64]) -> Result<Var> {
        let (vf, vm) = (self.value(f), self.value(flow));
        let n = vf.nrows();
        let k = vm.ncols();
        self.check(vm.nrows() == n && movable.len() == n && k > 0 && n % k == 0, || {
            format!(
                "flow_transport features {:?}, flow {:?}, {} populations",
                vf.dim(),
                vm.dim(),
                movable.len()
            )
        })?;
        let width = vf.ncols();
        let mut denom = vec![0.0; n];
        let mut clipped = vec![false; n];
        let mut frac = Array2::zeros((n, k));
        let mut stay = vec![Some(1.0); n];
        for r in 0..n {
            let out: f64 = vm.row(r).sum();
            if out <= 0.0 || movable[r] <= 0.0 {
                continue;
            }
            if out > movable[r] {
                clipped[r] = true;
                denom[r] = out;
            } else {
                denom[r] = movable[r];
            }
            let mut leaving = 0.0;
            for j in 0..k {
                let p = vm[[r, j]] / denom[r];
                frac[[r, j]] = p;
                leaving += p;
            }
            let keep = 1.0 - leaving;
            stay[r] = (keep >= 0.0).then_some(keep);
        }
        let vf = vf.as_standard_layout();
        let src = vf.as_slice().expect("standard layout");
        let fr = frac.as_slice().expect("owned");
        let stride = 2 * width;
        let mut out = vec![0.0; n * stride];
        for r in 0..n {
            let base = r - r % k;
            let x = &src[r * width..(r + 1) * width];
            let a = stay[r].unwrap_or(0.0);
            for (d, v) in out[r * stride + width..(r + 1) * stride].iter_mut().zip(x) {
                *d = a * v;
            }
            for j in 0..k {
                let p = fr[r * k + j];
                if p != 0.0 {
                    let row = (base + j) * stride;
                    for (d, v) in out[row..row + width].iter_mut().zip(x) {
                        *d += p * v;
                    }
                }
            }
        }
        let result = Array2::from_shape_vec((n, stride), out).expect("sized above");
        let g = self.grad_of(&[f, flow]);
        Ok(self.push(
            result,
            Op::FlowTransport {
                f,
                flow,
                denom,
                clipped,
                frac,
                stay,
            },
            g,
        ))
    }

    /// Unweighted mean of neighbour features. Neighbours of `i` are the `j ≠ i` joined to `i`
    /// by a positive edge in either direction; an isolated node aggregates to zero.
    pub fn neighbor_mean(&mut self, f: Var, flow: Var) -> Result<Var> {
        let vm = self.value(flow);
        let k = vm.ncols();
        let mut weights = neighbor_mask(vm);
        for mut row in weights.rows_mut() {
            let deg: f64 = row.sum();
            if deg > 0.0 {
                row.mapv_inplace(|v| v / deg);
            }
        }
        let out = aggregate(self.value(f), &weights, k)?;
        let g = self.grad_of(&[f]);
        Ok(self.push(out, Op::NeighborMean { f, weights }, g))
    }

    /// Neighbour aggregation weighted by a softmax of the in-flows `flow[j, i]` over the
    /// neighbours `j` of `i`.
    pub fn softmax_aggregate(&mut self, f: Var, flow: Var) -> Result<Var> {
        let vm = self.value(flow);
        let k = vm.ncols();
        let mask = neighbor_mask(vm);
        let n = vm.nrows();
        let mut weights = Array2::zeros((n, k));
        for r in 0..n {
            let base = r - r % k;
            let i = r % k;
            let max = (0..k)
                .filter(|&j| mask[[r, j]] > 0.0)
                .map(|j| vm[[base + j, i]])
                .fold(f64::NEG_INFINITY, f64::max);
            if max == f64::NEG_INFINITY {
                continue;
            }
            let mut total = 0.0;
            for j in 0..k {
                if mask[[r, j]] > 0.0 {
                    let e = (vm[[base + j, i]] - max).exp();
                    weights[[r, j]] = e;
                    total += e;
                }
            }
            weights.row_mut(r).mapv_inplace(|v| v / total);
        }
        let out = aggregate(self.value(f), &weights, k)?;
        let g = self.grad_of(&[f, flow]);
        Ok(self.push(out, Op::SoftmaxAggregate { f, flow, weights }, g))
    }

    /// Reverse pass from `out` with upstream gradient `seed`.
    pub fn backward(&self, out: Var, seed: Array2<f64>) -> Result<Gradients> {
        if seed.dim() != self.value(out).dim() {
            return Err(NnError::Shape(format!(
                "seed {:?} for output {:?}",
                seed.dim(),
                self.value(out).dim()
            )));
        }
        let mut grads: Vec<Option<Array2<f64>>> = vec![None; self.nodes.len()];
        grads[out.0] = Some(seed);
        for idx in (0..=out.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !g.sum().is_finite() {
                return Err(NnError::NonFinite {
                    scope: node.scope,
                    what: "gradient",
                });
            }
            if node.needs_grad {
                self.propagate(idx, &g, &mut grads);
            }
            grads[idx] = Some(g);
        }
        Ok(Gradients { grads })
    }

    fn accumulate(&self, grads: &mut [Option<Array2<f64>>], v: Var, g: Array2<f64>) {
        if !self.nodes[v.0].needs_grad {
            return;
        }
        match &mut grads[v.0] {
            Some(acc) => *acc += &g,
            slot => *slot = Some(g),
        }
    }

    fn propagate(&self, idx: usize, g: &Array2<f64>, grads: &mut [Option<Array2<f64>>]) {
        match &self.nodes[idx].op {
            Op::Leaf => {}
            Op::MatMul(a, b) => {
                let (va, vb) = (self.value(*a), self.value(*b));
                if self.nodes[a.0].needs_grad {
                    self.accumulate(grads, *a, g.dot(&vb.t()));
                }
                if self.nodes[b.0].needs_grad {
                    self.accumulate(grads, *b, va.t().dot(g));
                }
            }
            Op::Add(a, b) => {
                self.accumulate(grads, *a, g.clone());
                self.accumulate(grads, *b, g.clone());
            }
            Op::AddBias(x, bias) => {
                self.accumulate(grads, *x, g.clone());
                let db = if self.value(*bias).ncols() == 1 {
                    Array2::from_elem((1, 1), g.sum())
                } else {
                    g.sum_axis(Axis(0)).insert_axis(Axis(0))
                };
                self.accumulate(grads, *bias, db);
            }
            Op::Activation(x, act) => {
                let mut dx = g.clone();
                Zip::from(&mut dx)
                    .and(&self.nodes[idx].value)
                    .for_each(|d, y| *d *= act.derivative_at_output(*y));
                self.accumulate(grads, *x, dx);
            }
            Op::ConcatCols(a, b) => {
                let ca = self.value(*a).ncols();
                self.accumulate(grads, *a, g.slice(s![.., ..ca]).to_owned());
                self.accumulate(grads, *b, g.slice(s![.., ca..]).to_owned());
            }
            Op::MulConst(x, c) => self.accumulate(grads, *x, g * &**c),
            Op::Affine(x, alpha) => self.accumulate(grads, *x, g * *alpha),
            Op::ScaleConst(scalar, c) => {
                let ds = (g * &**c).sum();
                self.accumulate(grads, *scalar, Array2::from_elem((1, 1), ds));
            }
            Op::PairSum(u, v) => {
                let k = g.ncols();
                let n = g.nrows();
                let du = g.sum_axis(Axis(1)).insert_axis(Axis(1));
                let mut dv = Array2::zeros((n, 1));
                for r in 0..n {
                    let base = r - r % k;
                    for j in 0..k {
                        dv[[base + j, 0]] += g[[r, j]];
                    }
                }
                self.accumulate(grads, *u, du);
                self.accumulate(grads, *v, dv);
            }
            Op::RowSum(x) => {
                let cols = self.value(*x).ncols();
                let dx = g.broadcast((g.nrows(), cols)).expect("column broadcast").to_owned();
                self.accumulate(grads, *x, dx);
            }
            Op::SegmentMean(x, k) => {
                let (rows, cols) = self.value(*x).dim();
                let mut dx = Array2::zeros((rows, cols));
                for r in 0..rows {
                    dx.row_mut(r).assign(&(&g.row(r / k) / *k as f64));
                }
                self.accumulate(grads, *x, dx);
            }
            Op::FlowTransport {
                f,
                flow,
                denom,
                clipped,
                frac,
                stay,
            } => {
                let vf = self.value(*f);
                let (n, width) = vf.dim();
                let k = frac.ncols();
                let g = g.as_standard_layout();
                let gs = g.as_slice().expect("standard layout");
                let fr = frac.as_slice().expect("owned");
                let stride = 2 * width;
                let g_in = |row: usize| &gs[row * stride..row * stride + width];
                let g_stay = |row: usize| &gs[row * stride + width..(row + 1) * stride];
                if self.nodes[f.0].needs_grad {
                    let mut df = vec![0.0; n * width];
                    for r in 0..n {
                        let base = r - r % k;
                        let d = &mut df[r * width..(r + 1) * width];
                        if let Some(a) = stay[r] {
                            for (d, v) in d.iter_mut().zip(g_stay(r)) {
                                *d = a * v;
                            }
                        }
                        for j in 0..k {
                            let p = fr[r * k + j];
                            if p != 0.0 {
                                for (d, v) in d.iter_mut().zip(g_in(base + j)) {
                                    *d += p * v;
                                }
                            }
                        }
                    }
                    let df = Array2::from_shape_vec((n, width), df).expect("sized above");
                    self.accumulate(grads, *f, df);
                }
                if self.nodes[flow.0].needs_grad {
                    let vf = vf.as_standard_layout();
                    let src = vf.as_slice().expect("standard layout");
                    let vm = self.value(*flow);
                    let dot = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| x * y).sum::<f64>();
                    let mut dflow = vec![0.0; n * k];
                    for r in 0..n {
                        if denom[r] == 0.0 {
                            continue;
                        }
                        let base = r - r % k;
                        let x = &src[r * width..(r + 1) * width];
                        let stay_term = if stay[r].is_some() { dot(x, g_stay(r)) } else { 0.0 };
                        let row = &mut dflow[r * k..(r + 1) * k];
                        for (j, d) in row.iter_mut().enumerate() {
                            *d = dot(x, g_in(base + j)) - stay_term;
                        }
                        let cross = if clipped[r] {
                            row.iter().zip(vm.row(r)).map(|(d, m)| d * m).sum::<f64>() / denom[r]
                        } else {
                            0.0
                        };
                        for d in row.iter_mut() {
                            *d = (*d - cross) / denom[r];
                        }
                    }
                    let dflow = Array2::from_shape_vec((n, k), dflow).expect("sized above");
                    self.accumulate(grads, *flow, dflow);
                }
            }
            Op::NeighborMean { f, weights } => {
                self.accumulate(grads, *f, aggregate_transpose(g, weights));
            }
            Op::SoftmaxAggregate { f, flow, weights } => {
                if self.nodes[f.0].needs_grad {
                    self.accumulate(grads, *f, aggregate_transpose(g, weights));
                }
                if self.nodes[flow.0].needs_grad {
                    let vf = self.value(*f);
                    let (n, k) = weights.dim();
                    let mut dflow = Array2::zeros((n, k));
                    for r in 0..n {
                        let base = r - r % k;
                        let i = r % k;
                        let dw: Vec<f64> = (0..k)
                            .map(|j| g.row(r).dot(&vf.row(base + j)))
                            .collect();
                        let mean: f64 = (0..k).map(|j| weights[[r, j]] * dw[j]).sum();
                        for j in 0..k {
                            let w = weights[[r, j]];
                            if w > 0.0 {
                                dflow[[base + j, i]] += w * (dw[j] - mean);
                            }
                        }
                    }
                    self.accumulate(grads, *flow, dflow);
                }
            }
        }
    }

}

/// 1 where `j ≠ i` and either edge between `i` and `j` is positive.
fn neighbor_mask(flow: &Array2<f64>) -> Array2<f64> {
    let (n, k) = flow.dim();
    let mut mask = Array2::zeros((n, k));
    for r in 0..n {
        let base = r - r % k;
        let i = r % k;
        for j in 0..k {
            if j != i && (flow[[r, j]] > 0.0 || flow[[base + j, i]] > 0.0) {
                mask[[r, j]] = 1.0;
            }
        }
    }
    mask
}

/// `out[b·K + i] = Σ_j weights[b·K + i, j] · f[b·K + j]`.
fn aggregate(f: &Array2<f64>, weights: &Array2<f64>, k: usize) -> Result<Array2<f64>> {
    if f.nrows() != weights.nrows() || k == 0 || f.nrows() % k != 0 {
        return Err(NnError::Shape(format!(
            "aggregate features {:?} with weights {:?}",
            f.dim(),
            weights.dim()
        )));
    }
    let mut out = Array2::zeros(f.dim());
    for b in 0..f.nrows() / k {
        let rows = s![b * k..(b + 1) * k, ..];
        out.slice_mut(rows)
            .assign(&weights.slice(rows).dot(&f.slice(rows)));
    }
    Ok(out)
}

fn aggregate_transpose(g: &Array2<f64>, weights: &Array2<f64>) -> Array2<f64> {
    let k = weights.ncols();
    let mut out = Array2::zeros(g.dim());
    for b in 0..g.nrows() / k {
        let rows = s![b * k..(b + 1) * k, ..];
        out.slice_mut(rows)
            .assign(&weights.slice(rows).t().dot(&g.slice(rows)));
    }
    out
}
