//! Observation encoding and batch stacking.

use std::sync::Arc;

use epiflow_core::{ControlEnv, Observation, OdMatrix};
use ndarray::{s, Array2};

/// Node feature width: S+I, H, R, their hourly deltas and the mobility loss. Counts other than
/// S+I enter as `asinh(gain · x / N)`, which stays linear near zero and logarithmic beyond.
pub const NODE_FEATURES: usize = 7;

/// Per-city constants needed to encode observations.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureContext {
    pub population: Vec<f64>,
    pub mean_outflow: Vec<f64>,
    pub l_0: f64,
    pub gains: [f64; 4],
}

impl FeatureContext {
    pub fn from_env(env: &ControlEnv, gains: [f64; 4]) -> Self {
        Self {
            population: env.series().population().to_vec(),
            mean_outflow: env.mean_outflow().to_vec(),
            l_0: env.config().l_0,
            gains,
        }
    }

    pub fn num_regions(&self) -> usize {
        self.population.len()
    }
}

/// One encoded observation.
#[derive(Clone, Debug)]
pub struct GraphInput {
    pub features: Array2<f64>,
    /// Demand frames for the control period, one per graph layer.
    pub frames: Vec<Arc<OdMatrix>>,
    /// Movable population `S + I + R` at the start of the control period.
    pub movable: Vec<f64>,
    /// `Σ_t M_d[i, j] / M̄_i` over the control period.
    pub demand_share: Array2<f64>,
    /// `exp(L_i / L_0)`.
    pub loss_weight: Vec<f64>,
}

impl GraphInput {
    pub fn num_regions(&self) -> usize {
        self.features.nrows()
    }

    pub fn encode(obs: &Observation, ctx: &FeatureContext) -> Self {
        let k = ctx.num_regions();
        let [g_si, g_h, g_r, g_d] = ctx.gains;
        let mut features = Array2::zeros((k, NODE_FEATURES));
        for x in 0..k {
            let n = ctx.population[x].max(1.0);
            let v = &obs.visible;
            let d = &obs.delta;
            let squash = |gain: f64, value: f64| (gain * value / n).asinh();
            let row = [
                g_si * v.si[x] / n,
                squash(g_h, v.h[x]),
                squash(g_r, v.r[x]),
                squash(g_d, d.si[x]),
                squash(g_d, d.h[x]),
                squash(g_d, d.r[x]),
                obs.loss[x] / ctx.l_0,
            ];
            features.row_mut(x).assign(&ndarray::aview1(&row));
        }
        let mut demand_share = Array2::zeros((k, k));
        for frame in &obs.demand_window {
            demand_share += &**frame;
        }
        for x in 0..k {
            let m = ctx.mean_outflow[x];
            let scale = if m > 0.0 { 1.0 / m } else { 0.0 };
            demand_share.row_mut(x).mapv_inplace(|v| v * scale);
        }
        Self {
            features,
            frames: obs.demand_window.clone(),
            movable: obs.visible.movable(),
            demand_share,
            loss_weight: obs.loss.iter().map(|l| (l / ctx.l_0).exp()).collect(),
        }
    }
}

/// Observations stacked into `(B·K, ·)` blocks.
#[derive(Clone, Debug)]
pub struct Batch {
    pub size: usize,
    pub num_regions: usize,
    pub features: Array2<f64>,
    /// One stacked `(B·K, K)` demand matrix per graph layer.
    pub frames: Vec<Arc<Array2<f64>>>,
    pub movable: Vec<f64>,
    pub demand_share: Arc<Array2<f64>>,
    /// `demand_share` with each row scaled by `exp(L_i / L_0)`.
    pub weighted_share: Arc<Array2<f64>>,
}

impl Batch {
    pub fn stack(inputs: &[&GraphInput]) -> Self {
        let b = inputs.len();
        let k = inputs.first().map_or(0, |i| i.num_regions());
        let layers = inputs.first().map_or(0, |i| i.frames.len());
        let mut features = Array2::zeros((b * k, NODE_FEATURES));
        let mut frames = vec![Array2::zeros((b * k, k)); layers];
        let mut movable = Vec::with_capacity(b * k);
        let mut demand_share = Array2::zeros((b * k, k));
        let mut weighted_share = Array2::zeros((b * k, k));
        for (n, input) in inputs.iter().enumerate() {
            let rows = s![n * k..(n + 1) * k, ..];
            features.slice_mut(rows).assign(&input.features);
            for (dst, src) in frames.iter_mut().zip(&input.frames) {
                dst.slice_mut(rows).assign(&**src);
            }
            movable.extend_from_slice(&input.movable);
            demand_share.slice_mut(rows).assign(&input.demand_share);
            let mut w = input.demand_share.clone();
            for (x, mut row) in w.rows_mut().into_iter().enumerate() {
                row.mapv_inplace(|v| v * input.loss_weight[x]);
            }
            weighted_share.slice_mut(rows).assign(&w);
        }
        Self {
            size: b,
            num_regions: k,
            features,
            frames: frames.into_iter().map(Arc::new).collect(),
            movable,
            demand_share: Arc::new(demand_share),
            weighted_share: Arc::new(weighted_share),
        }
    }
}

/// Movable population before each hour of the control period when `flows[t]` (stacked) move
/// people. Infeasible rows send everything, as in the simulator.
pub fn propagate_movable(initial: &[f64], flows: &[&Array2<f64>]) -> Vec<Vec<f64>> {
    let mut out = Vec::with_capacity(flows.len());
    let mut n = initial.to_vec();
    for (t, flow) in flows.iter().enumerate() {
        out.push(n.clone());
        if t + 1 == flows.len() {
            break;
        }
        let k = flow.ncols();
        let flow = flow.as_standard_layout();
        let m = flow.as_slice().expect("standard layout");
        let mut next = n.clone();
        for r in 0..n.len() {
            let row = &m[r * k..(r + 1) * k];
            let sent: f64 = row.iter().sum();
            if sent <= 0.0 || n[r] <= 0.0 {
                continue;
            }
            let scale = if sent > n[r] { n[r] / sent } else { 1.0 };
            let base = r - r % k;
            for (j, v) in row.iter().enumerate() {
                let moved = v * scale;
                next[r] -= moved;
                next[base + j] += moved;
            }
        }
        n = next.into_iter().map(|v| v.max(0.0)).collect();
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn movable_propagation_follows_flows() {
        let flows = [array![[0.0, 4.0], [1.0, 0.0]], array![[0.0, 0.0], [0.0, 0.0]]];
        let refs: Vec<&Array2<f64>> = flows.iter().collect();
        let n = propagate_movable(&[10.0, 10.0], &refs);
        assert_eq!(n, vec![vec![10.0, 10.0], vec![7.0, 13.0]]);
        // Infeasible row sends everyone.
        let flows = [array![[0.0, 40.0], [0.0, 0.0]], array![[0.0, 0.0], [0.0, 0.0]]];
        let refs: Vec<&Array2<f64>> = flows.iter().collect();
        assert_eq!(propagate_movable(&[10.0, 0.0], &refs)[1], vec![0.0, 10.0]);
    }
}
