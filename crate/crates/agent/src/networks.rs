//! Actor and critic built from graph layers over the control-period demand frames.

use std::sync::Arc;

use epiflow_core::QuotaMatrix;
use epiflow_nn::{Activation, Dense, EdgeInput, GraphKind, GraphLayer, ParamSet, Tape, Var};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{AgentError, Result};
use crate::features::{propagate_movable, Batch, GraphInput, NODE_FEATURES};

fn graph_stack<R: Rng + ?Sized>(
    params: &mut ParamSet,
    prefix: &str,
    kind: GraphKind,
    depth: usize,
    hidden: usize,
    rng: &mut R,
) -> Vec<GraphLayer> {
    (0..depth)
        .map(|l| {
            let input = if l == 0 { NODE_FEATURES } else { hidden };
            GraphLayer::new(params, &format!("{prefix}.graph{l}"), kind, input, hidden, Activation::Relu, rng)
        })
        .collect()
}

fn run_stack(
    tape: &mut Tape,
    bound: &[Var],
    layers: &[GraphLayer],
    mut f: Var,
    flows: &[Var],
    movable: Vec<Vec<f64>>,
) -> Result<Var> {
    for (l, ((layer, flow), n)) in layers.iter().zip(flows).zip(movable).enumerate() {
        tape.set_scope(Some(l));
        f = layer.forward(tape, bound, f, &EdgeInput { flow: *flow, movable: n })?;
    }
    tape.set_scope(None);
    Ok(f)
}

/// Maps an observation to per-edge quota rates
/// `p[i, j] = sigmoid(u · f_i + v · f_j + w · share[i, j] + b)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Actor {
    pub params: ParamSet,
    layers: Vec<GraphLayer>,
    source: usize,
    target: usize,
    share: usize,
    bias: usize,
}

impl Actor {
    pub fn new<R: Rng + ?Sized>(kind: GraphKind, depth: usize, hidden: usize, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let layers = graph_stack(&mut params, "actor", kind, depth, hidden, rng);
        let limit = (3.0 / hidden as f64).sqrt();
        let mut head = |params: &mut ParamSet, name: &str| {
            params.push(name, Array2::from_shape_simple_fn((hidden, 1), || rng.random_range(-limit..limit)))
        };
        let source = head(&mut params, "actor.head.source");
        let target = head(&mut params, "actor.head.target");
        let share = params.push("actor.head.share", Array2::zeros((1, 1)));
        let bias = params.push("actor.head.bias", Array2::zeros((1, 1)));
        Self {
            params,
            layers,
            source,
            target,
            share,
            bias,
        }
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn graph_kind(&self) -> GraphKind {
        self.layers[0].kind
    }

    /// Quota rates for a stacked batch, `(B·K, K)`.
    pub fn forward(&self, tape: &mut Tape, bound: &[Var], batch: &Batch) -> Result<Var> {
        check_depth(self.layers.len(), batch)?;
        let f = tape.input(batch.features.clone());
        let flows: Vec<Var> = batch.frames.iter().map(|m| tape.input((**m).clone())).collect();
        let refs: Vec<&Array2<f64>> = batch.frames.iter().map(|m| &**m).collect();
        let movable = propagate_movable(&batch.movable, &refs);
        let f = run_stack(tape, bound, &self.layers, f, &flows, movable)?;
        let u = tape.matmul(f, bound[self.source])?;
        let v = tape.matmul(f, bound[self.target])?;
        let z = tape.pair_sum(u, v, batch.num_regions)?;
        let per_hour = Arc::new(batch.demand_share.mapv(|s| s / self.layers.len() as f64));
        let d = tape.scale_const(bound[self.share], per_hour)?;
        let z = tape.add(z, d)?;
        let z = tape.add_bias(z, bound[self.bias])?;
        Ok(tape.activation(z, Activation::Sigmoid))
    }

    pub fn rates(&self, input: &GraphInput) -> Result<Array2<f64>> {
        let batch = Batch::stack(&[input]);
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let p = self.forward(&mut tape, &bound, &batch)?;
        let mut rates = tape.value(p).clone();
        if rates.iter().any(|v| !v.is_finite()) {
            return Err(AgentError::NonFinite("actor output".into()));
        }
        for x in 0..rates.nrows() {
            rates[[x, x]] = 1.0;
        }
        Ok(rates)
    }

    pub fn act(&self, input: &GraphInput) -> Result<QuotaMatrix> {
        Ok(QuotaMatrix::new(self.rates(input)?)?)
    }
}

/// Scores a quota-rate matrix by running graph layers over the controlled flows `M_d ⊙ p`,
/// then reading out node embeddings together with each region's restricted mobility. Layer
/// populations follow the demand, so they do not depend on `p`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Critic {
    pub params: ParamSet,
    layers: Vec<GraphLayer>,
    hidden: Dense,
    output: Dense,
}

impl Critic {
    pub fn new<R: Rng + ?Sized>(kind: GraphKind, depth: usize, hidden: usize, rng: &mut R) -> Self {
        let mut params = ParamSet::new();
        let layers = graph_stack(&mut params, "critic", kind, depth, hidden, rng);
        let hidden_layer = Dense::new(&mut params, "critic.readout", hidden + 2, hidden, Activation::Relu, rng);
        let output = Dense::new(&mut params, "critic.value", hidden, 1, Activation::Identity, rng);
        Self {
            params,
            layers,
            hidden: hidden_layer,
            output,
        }
    }

    /// Values `(B, 1)` of the rates `p` (stacked `(B·K, K)`).
    pub fn forward(&self, tape: &mut Tape, bound: &[Var], batch: &Batch, p: Var) -> Result<Var> {
        check_depth(self.layers.len(), batch)?;
        let f = tape.input(batch.features.clone());
        let mut flows = Vec::with_capacity(batch.frames.len());
        for frame in &batch.frames {
            flows.push(tape.mul_const(p, Arc::clone(frame))?);
        }
        let refs: Vec<&Array2<f64>> = batch.frames.iter().map(|m| &**m).collect();
        let movable = propagate_movable(&batch.movable, &refs);
        let f = run_stack(tape, bound, &self.layers, f, &flows, movable)?;
        let closed = tape.affine(p, -1.0, 1.0);
        let restricted = tape.mul_const(closed, Arc::clone(&batch.demand_share))?;
        let restricted = tape.row_sum(restricted);
        let weighted = tape.mul_const(closed, Arc::clone(&batch.weighted_share))?;
        let weighted = tape.row_sum(weighted);
        let h = tape.concat_cols(f, restricted)?;
        let h = tape.concat_cols(h, weighted)?;
        let h = self.hidden.forward(tape, bound, h)?;
        let q = self.output.forward(tape, bound, h)?;
        Ok(tape.segment_mean(q, batch.num_regions)?)
    }

    pub fn value(&self, input: &GraphInput, rates: &Array2<f64>) -> Result<f64> {
        let batch = Batch::stack(&[input]);
        let mut tape = Tape::new();
        let bound = self.params.bind_frozen(&mut tape);
        let p = tape.input(rates.clone());
        let q = self.forward(&mut tape, &bound, &batch, p)?;
        Ok(tape.value(q)[[0, 0]])
    }
}

fn check_depth(depth: usize, batch: &Batch) -> Result<()> {
    if batch.frames.len() != depth {
        return Err(AgentError::Config(format!(
            "network has {depth} graph layers but the observation carries {} demand frames",
            batch.frames.len()
        )));
    }
    Ok(())
}
