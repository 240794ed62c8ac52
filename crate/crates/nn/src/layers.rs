//! Parameter storage, dense layers and the three graph layer types.

use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{NnError, Result};
use crate::tape::{Activation, Gradients, Tape, Var};

/// Named trainable tensors of one network.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Array2<f64>>,
}

impl ParamSet {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, tensor: Array2<f64>) -> usize {
        self.names.push(name.into());
        self.tensors.push(tensor);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Array2<f64>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.tensors
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Array2::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    /// Records every tensor on `tape` as a differentiable leaf.
    pub fn bind(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t.clone())).collect()
    }

    /// Records every tensor as a constant.
    pub fn bind_frozen(&self, tape: &mut Tape) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.input(t.clone())).collect()
    }

    /// Gradients for the tensors bound as `bound`, zero where nothing flowed.
    pub fn gradients(&self, bound: &[Var], grads: &Gradients) -> Vec<Array2<f64>> {
        bound
            .iter()
            .zip(&self.tensors)
            .map(|(v, t)| grads.get_or_zeros(*v, t.dim()))
            .collect()
    }

    /// `self ← τ · online + (1 − τ) · self`.
    pub fn soft_update(&mut self, online: &ParamSet, tau: f64) -> Result<()> {
        self.check_compatible(online)?;
        for (t, o) in self.tensors.iter_mut().zip(&online.tensors) {
            t.zip_mut_with(o, |a, b| *a = tau * b + (1.0 - tau) * *a);
        }
        Ok(())
    }

    pub fn check_compatible(&self, other: &ParamSet) -> Result<()> {
        let same = self.tensors.len() == other.tensors.len()
            && self.tensors.iter().zip(&other.tensors).all(|(a, b)| a.dim() == b.dim());
        if same {
            Ok(())
        } else {
            Err(NnError::Shape("parameter sets have different layouts".into()))
        }
    }
}

/// Global-norm gradient clipping; returns the norm before clipping.
pub fn clip_global_norm(grads: &mut [Array2<f64>], max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flat_map(|g| g.iter())
        .map(|v| v * v)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        for g in grads.iter_mut() {
            g.mapv_inplace(|v| v * scale);
        }
    }
    norm
}

fn glorot<R: Rng + ?Sized>(rng: &mut R, rows: usize, cols: usize) -> Array2<f64> {
    let limit = (6.0 / (rows + cols) as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dense {
    pub weight: usize,
    pub bias: usize,
    pub activation: Activation,
    pub input_width: usize,
    pub output_width: usize,
}

impl Dense {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        input_width: usize,
        output_width: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let weight = params.push(format!("{name}.weight"), glorot(rng, input_width, output_width));
        let bias = params.push(format!("{name}.bias"), Array2::zeros((1, output_width)));
        Self {
            weight,
            bias,
            activation,
            input_width,
            output_width,
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &[Var], x: Var) -> Result<Var> {
        let h = tape.matmul(x, bound[self.weight])?;
        let h = tape.add_bias(h, bound[self.bias])?;
        Ok(tape.activation(h, self.activation))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum GraphKind {
    /// Transport-weighted aggregation `[f_in | f_stay]`.
    Flow,
    /// `[f | mean of neighbours]`.
    Mean,
    /// `[f | in-flow softmax-weighted neighbours]`.
    Softmax,
}

/// Edge input for one graph layer: stacked `(B·K, K)` flows and, for [`GraphKind::Flow`], the
/// movable population of each stacked node.
#[derive(Clone, Debug)]
pub struct EdgeInput {
    pub flow: Var,
    pub movable: Vec<f64>,
}

/// `σ(W · [aggregate | self-term] + B)` with `W` of shape `(2F, F')`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GraphLayer {
    pub kind: GraphKind,
    pub weight: usize,
    pub bias: usize,
    pub activation: Activation,
    pub input_width: usize,
    pub output_width: usize,
}

impl GraphLayer {
    pub fn new<R: Rng + ?Sized>(
        params: &mut ParamSet,
        name: &str,
        kind: GraphKind,
        input_width: usize,
        output_width: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let weight = params.push(format!("{name}.weight"), glorot(rng, 2 * input_width, output_width));
        let bias = params.push(format!("{name}.bias"), Array2::zeros((1, output_width)));
        Self {
            kind,
            weight,
            bias,
            activation,
            input_width,
            output_width,
        }
    }

    /// The pre-weight aggregate, `(B·K, 2F)`.
    pub fn aggregate(&self, tape: &mut Tape, f: Var, edges: &EdgeInput) -> Result<Var> {
        match self.kind {
            GraphKind::Flow => tape.flow_transport(f, edges.flow, &edges.movable),
            GraphKind::Mean => {
                let agg = tape.neighbor_mean(f, edges.flow)?;
                tape.concat_cols(f, agg)
            }
            GraphKind::Softmax => {
                let agg = tape.softmax_aggregate(f, edges.flow)?;
                tape.concat_cols(f, agg)
            }
        }
    }

    pub fn forward(&self, tape: &mut Tape, bound: &[Var], f: Var, edges: &EdgeInput) -> Result<Var> {
        let width = tape.value(f).ncols();
        if width != self.input_width {
            return Err(NnError::Shape(format!(
                "graph layer expects width {}, got {width}",
                self.input_width
            )));
        }
        let cat = self.aggregate(tape, f, edges)?;
        let h = tape.matmul(cat, bound[self.weight])?;
        let h = tape.add_bias(h, bound[self.bias])?;
        Ok(tape.activation(h, self.activation))
    }
}
