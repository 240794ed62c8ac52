//! Origin-destination demand, quota application and the synthetic city generator.

use std::collections::HashMap;
use std::sync::Arc;

use ndarray::{Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Hourly K×K origin-destination flow matrix (persons/hour), row = origin.
pub type OdMatrix = Array2<f64>;

/// Hours in the base month produced by the generator.
pub const BASE_HOURS: usize = 744;

/// Per-OD-pair quota rates, every entry in `[0, 1]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuotaMatrix(Array2<f64>);

impl QuotaMatrix {
    pub fn new(rates: Array2<f64>) -> Result<Self> {
        if rates.nrows() != rates.ncols() {
            return Err(Error::dims("square matrix", format!("{:?}", rates.dim())));
        }
        if let Some(bad) = rates.iter().find(|p| !(0.0..=1.0).contains(*p)) {
            return Err(Error::InvalidQuota(format!("entry {bad} outside [0, 1]")));
        }
        Ok(Self(rates))
    }

    pub fn uniform(num_regions: usize, rate: f64) -> Result<Self> {
        Self::new(Array2::from_elem((num_regions, num_regions), rate))
    }

    pub fn ones(num_regions: usize) -> Self {
        Self(Array2::ones((num_regions, num_regions)))
    }

    pub fn zeros(num_regions: usize) -> Self {
        Self(Array2::zeros((num_regions, num_regions)))
    }

    /// Region-level decision: row `i` is filled with `row_rates[i]`.
    pub fn from_row_rates(row_rates: &[f64]) -> Result<Self> {
        let k = row_rates.len();
        Self::new(Array2::from_shape_fn((k, k), |(i, _)| row_rates[i]))
    }

    pub fn num_regions(&self) -> usize {
        self.0.nrows()
    }

    pub fn as_array(&self) -> &Array2<f64> {
        &self.0
    }

    pub fn into_array(self) -> Array2<f64> {
        self.0
    }

    pub fn get(&self, origin: usize, destination: usize) -> f64 {
        self.0[[origin, destination]]
    }
}

/// `M_p = M_d ⊙ p`.
pub fn apply_quota(demand: &OdMatrix, quota: &QuotaMatrix) -> Result<OdMatrix> {
    if demand.dim() != quota.0.dim() {
        return Err(Error::dims(
            format!("{:?}", demand.dim()),
            format!("{:?}", quota.0.dim()),
        ));
    }
    Ok(demand * &quota.0)
}

/// Row sums of an OD matrix (out-flow per origin).
pub fn outflows(flows: &OdMatrix) -> Vec<f64> {
    flows.sum_axis(Axis(1)).to_vec()
}

/// Mean out-flow of one region over the series horizon.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct MeanOutflow {
    pub value: f64,
    /// Set when the region never sends any demand; consumers must guard divisions.
    pub zero_demand: bool,
}

/// Time-indexed hourly demand plus the initial regional populations.
///
/// Hourly matrices are stored once per distinct frame and referenced from an
/// hour schedule, so tiling a month over two years costs one index vector.
#[derive(Clone, Debug)]
pub struct MobilitySeries {
    population: Vec<f64>,
    frames: Vec<Arc<OdMatrix>>,
    schedule: Vec<usize>,
}

impl MobilitySeries {
    pub fn new(population: Vec<f64>, frames: Vec<OdMatrix>, schedule: Vec<usize>) -> Result<Self> {
        let k = population.len();
        if k == 0 {
            return Err(Error::InvalidParams("series needs at least one region".into()));
        }
        if let Some(p) = population.iter().find(|p| !(p.is_finite() && **p > 0.0)) {
            return Err(Error::InvalidParams(format!("population {p} must be positive")));
        }
        if schedule.is_empty() {
            return Err(Error::InvalidParams("series horizon must be positive".into()));
        }
        for (f, m) in frames.iter().enumerate() {
            if m.dim() != (k, k) {
                return Err(Error::dims(format!("({k}, {k})"), format!("{:?}", m.dim())));
            }
            if m.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                return Err(Error::InvalidParams(format!("frame {f} has a negative or non-finite flow")));
            }
            if (0..k).any(|i| m[[i, i]] != 0.0) {
                return Err(Error::InvalidParams(format!("frame {f} has a non-zero diagonal")));
            }
        }
        if let Some(&bad) = schedule.iter().find(|&&s| s >= frames.len()) {
            return Err(Error::InvalidParams(format!("schedule references missing frame {bad}")));
        }
        Ok(Self {
            population,
            frames: frames.into_iter().map(Arc::new).collect(),
            schedule,
        })
    }

    /// Builds a series from one matrix per hour, sharing storage between identical hours.
    pub fn from_hourly(population: Vec<f64>, hourly: Vec<OdMatrix>) -> Result<Self> {
        let mut index: HashMap<Vec<u64>, usize> = HashMap::new();
        let mut frames = Vec::new();
        let mut schedule = Vec::with_capacity(hourly.len());
        for m in hourly {
            let key: Vec<u64> = m.iter().map(|v| v.to_bits()).collect();
            let id = *index.entry(key).or_insert_with(|| {
                frames.push(m);
                frames.len() - 1
            });
            schedule.push(id);
        }
        Self::new(population, frames, schedule)
    }

    pub fn num_regions(&self) -> usize {
        self.population.len()
    }

    /// Number of hours covered.
    pub fn horizon(&self) -> usize {
        self.schedule.len()
    }

    pub fn population(&self) -> &[f64] {
        &self.population
    }

    pub fn frame_count(&self) -> usize {
        self.frames.len()
    }

    /// Demand at `hour`; hours past the horizon wrap around (the series is periodic).
    pub fn demand(&self, hour: usize) -> &OdMatrix {
        &self.frames[self.schedule[hour % self.schedule.len()]]
    }

    /// Shared handle to the demand at `hour` (cheap to clone into observations).
    pub fn demand_arc(&self, hour: usize) -> Arc<OdMatrix> {
        Arc::clone(&self.frames[self.schedule[hour % self.schedule.len()]])
    }

    pub fn outflow(&self, hour: usize) -> Vec<f64> {
        outflows(self.demand(hour))
    }

    /// `(1/T) Σ_τ Σ_j M_{d,i,j}^τ` for one region.
    pub fn mean_outflow(&self, region: usize) -> Result<MeanOutflow> {
        if region >= self.num_regions() {
            return Err(Error::dims(format!("region < {}", self.num_regions()), region));
        }
        Ok(self.mean_outflows()[region])
    }

    pub fn mean_outflows(&self) -> Vec<MeanOutflow> {
        let k = self.num_regions();
        let horizon = self.horizon() as f64;
        let mut counts = vec![0usize; self.frames.len()];
        for &s in &self.schedule {
            counts[s] += 1;
        }
        let mut mean = vec![0.0; k];
        for (frame, &count) in self.frames.iter().zip(&counts) {
            if count == 0 {
                continue;
            }
            let weight = count as f64 / horizon;
            for (m, out) in mean.iter_mut().zip(outflows(frame)) {
                *m += weight * out;
            }
        }
        mean.into_iter()
            .map(|value| MeanOutflow {
                value,
                zero_demand: value <= 0.0,
            })
            .collect()
    }

    /// Mean hourly probability that a person moves: `Σ_τ Σ_ij M / (T · Σ_i N_i)`.
    pub fn realized_move_probability(&self) -> f64 {
        let total_pop: f64 = self.population.iter().sum();
        let mean_total: f64 = self.mean_outflows().iter().map(|m| m.value).sum();
        mean_total / total_pop
    }

    /// Tiles the demand schedule `repeats` times.
    pub fn prolong(&self, repeats: usize) -> Result<Self> {
        if repeats == 0 {
            return Err(Error::InvalidParams("repeats must be at least 1".into()));
        }
        let schedule = self
            .schedule
            .iter()
            .copied()
            .cycle()
            .take(self.schedule.len() * repeats)
            .collect();
        Ok(Self {
            population: self.population.clone(),
            frames: self.frames.clone(),
            schedule,
        })
    }

    /// Copy restricted to the first `hours` hours.
    pub fn truncate(&self, hours: usize) -> Result<Self> {
        if hours == 0 || hours > self.horizon() {
            return Err(Error::InvalidParams(format!(
                "cannot truncate a {}-hour series to {hours} hours",
                self.horizon()
            )));
        }
        Ok(Self {
            population: self.population.clone(),
            frames: self.frames.clone(),
            schedule: self.schedule[..hours].to_vec(),
        })
    }
}

impl PartialEq for MobilitySeries {
    fn eq(&self, other: &Self) -> bool {
        self.population == other.population
            && self.horizon() == other.horizon()
            && (0..self.horizon()).all(|h| {
                let (a, b) = (&self.frames[self.schedule[h]], &other.frames[other.schedule[h]]);
                Arc::ptr_eq(a, b) || a == b
            })
    }
}

/// Parameters of the synthetic city generator.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CityGenParams {
    pub grid_rows: usize,
    pub grid_cols: usize,
    pub mean_population: f64,
    /// Target mean hourly probability that a person moves.
    pub p_move: f64,
    /// Fraction of residents of non-work regions making the weekday commute.
    pub commute_fraction: f64,
    pub seed: u64,
}

impl Default for CityGenParams {
    fn default() -> Self {
        Self {
            grid_rows: 17,
            grid_cols: 19,
            mean_population: 1686.0,
            p_move: 0.18,
            commute_fraction: 0.3,
            seed: 0,
        }
    }
}

impl CityGenParams {
    pub fn num_regions(&self) -> usize {
        self.grid_rows * self.grid_cols
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid_rows == 0 || self.grid_cols == 0 || self.num_regions() < 2 {
            return Err(Error::InvalidParams(format!(
                "grid {}x{} needs at least 2 regions",
                self.grid_rows, self.grid_cols
            )));
        }
        if !(self.mean_population.is_finite() && self.mean_population > 0.0) {
            return Err(Error::InvalidParams("mean_population must be positive".into()));
        }
        if !(self.p_move > 0.0 && self.p_move < 1.0) {
            return Err(Error::InvalidParams("p_move must lie in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.commute_fraction) {
            return Err(Error::InvalidParams("commute_fraction must lie in [0, 1]".into()));
        }
        Ok(())
    }
}

// Relative intensity of non-commute movement by hour of day.
const DIURNAL: [f64; 24] = [
    0.15, 0.15, 0.15, 0.15, 0.15, 0.25, 0.5, 1.2, 1.6, 1.4, 1.1, 1.1, 1.3, 1.2, 1.1, 1.1, 1.3, 1.6,
    1.7, 1.4, 1.1, 0.8, 0.5, 0.3,
];
const MORNING: [(usize, f64); 3] = [(7, 0.3), (8, 0.45), (9, 0.25)];
const EVENING: [(usize, f64); 3] = [(17, 0.25), (18, 0.45), (19, 0.3)];
const WEEKEND_COMMUTE: f64 = 0.25;
const WEEKEND_BACKGROUND: f64 = 0.85;
const KERNEL_CUTOFF: f64 = 2.0;
const COMMUTE_RADIUS: f64 = 4.0;
const WORK_SHARE: f64 = 0.2;
const POPULATION_SIGMA: f64 = 0.5;

fn is_weekend(day: usize) -> bool {
    day % 7 >= 5
}

/// Generates a 31-day gravity-kernel city with a weekday commute cycle.
///
/// Regions are indexed row-major over the grid. Flows are
/// `background(h) · G + commute(h)`, where `G_ij ∝ N_i N_j / d_ij²` (symmetric, cut off at
/// distance 2) and the commute moves residents toward work regions in the morning and back in
/// the evening, so every day is population-balanced.
pub fn generate_synthetic_city(params: &CityGenParams) -> Result<MobilitySeries> {
    params.validate()?;
    let k = params.num_regions();
    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);

    let weights: Vec<f64> = (0..k)
        .map(|_| {
            let z: f64 = rng.sample(StandardNormal);
            (POPULATION_SIGMA * z).exp()
        })
        .collect();
    let mean_w = weights.iter().sum::<f64>() / k as f64;
    let population: Vec<f64> = weights
        .iter()
        .map(|w| params.mean_population * w / mean_w)
        .collect();

    let coords: Vec<(f64, f64)> = (0..k)
        .map(|i| ((i / params.grid_cols) as f64, (i % params.grid_cols) as f64))
        .collect();
    let dist = |a: usize, b: usize| {
        let (dr, dc) = (coords[a].0 - coords[b].0, coords[a].1 - coords[b].1);
        (dr * dr + dc * dc).sqrt()
    };

    // Work regions: weighted sampling without replacement (key = u^(1/w)).
    let n_work = ((WORK_SHARE * k as f64).round() as usize).clamp(1, k - 1);
    let mut keys: Vec<(f64, usize)> = (0..k)
        .map(|i| {
            let u: f64 = rng.random::<f64>().max(f64::MIN_POSITIVE);
            (u.powf(1.0 / population[i]), i)
        })
        .collect();
    keys.sort_by(|a, b| b.0.total_cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut is_work = vec![false; k];
    for &(_, i) in keys.iter().take(n_work) {
        is_work[i] = true;
    }
    let attractiveness: Vec<f64> = (0..k)
        .map(|i| {
            let jitter: f64 = rng.random_range(0.5..1.5);
            population[i] * jitter
        })
        .collect();

    let mut gravity = Array2::<f64>::zeros((k, k));
    for i in 0..k {
        for j in 0..k {
            let d = dist(i, j);
            if i != j && d <= KERNEL_CUTOFF {
                gravity[[i, j]] = population[i] * population[j] / (d * d);
            }
        }
    }
    let reach: Vec<f64> = (0..k)
        .map(|i| gravity.row(i).sum() / population[i])
        .collect();
    for i in 0..k {
        for j in 0..k {
            if gravity[[i, j]] > 0.0 {
                gravity[[i, j]] /= (reach[i] * reach[j]).sqrt();
            }
        }
    }

    let mut commute = Array2::<f64>::zeros((k, k));
    for i in (0..k).filter(|&i| !is_work[i]) {
        let mut targets: Vec<(usize, f64)> = (0..k)
            .filter(|&w| is_work[w] && dist(i, w) <= COMMUTE_RADIUS)
            .map(|w| (w, attractiveness[w] / dist(i, w).powi(2)))
            .collect();
        if targets.is_empty() {
            let nearest = (0..k)
                .filter(|&w| is_work[w])
                .min_by(|&a, &b| dist(i, a).total_cmp(&dist(i, b)).then(a.cmp(&b)))
                .expect("at least one work region");
            targets.push((nearest, 1.0));
        }
        let total: f64 = targets.iter().map(|t| t.1).sum();
        let commuters = params.commute_fraction * population[i];
        for (w, weight) in targets {
            commute[[i, w]] = commuters * weight / total;
        }
    }

    let days = BASE_HOURS / 24;
    let diurnal_mean = DIURNAL.iter().sum::<f64>() / 24.0;
    let (mut commute_days, mut background_days) = (0.0, 0.0);
    for day in 0..days {
        let weekend = is_weekend(day);
        commute_days += if weekend { WEEKEND_COMMUTE } else { 1.0 };
        background_days += if weekend { WEEKEND_BACKGROUND } else { 1.0 };
    }
    let total_pop: f64 = population.iter().sum();
    let target_total = params.p_move * BASE_HOURS as f64 * total_pop;
    let commute_total = 2.0 * commute.sum() * commute_days;
    let background_unit = background_days * 24.0 * gravity.sum();
    let background_scale = (target_total - commute_total) / background_unit;
    if !(background_scale > 0.0) {
        return Err(Error::InvalidParams(
            "commute_fraction too large for the requested p_move".into(),
        ));
    }

    let mut frames = Vec::with_capacity(48);
    for weekend in [false, true] {
        let (c_scale, b_scale) = if weekend {
            (WEEKEND_COMMUTE, WEEKEND_BACKGROUND)
        } else {
            (1.0, 1.0)
        };
        for (hour, &intensity) in DIURNAL.iter().enumerate() {
            let mut m = &gravity * (background_scale * b_scale * intensity / diurnal_mean);
            if let Some(&(_, share)) = MORNING.iter().find(|(h, _)| *h == hour) {
                m.scaled_add(c_scale * share, &commute);
            }
            if let Some(&(_, share)) = EVENING.iter().find(|(h, _)| *h == hour) {
                m.scaled_add(c_scale * share, &commute.t());
            }
            frames.push(m);
        }
    }
    let schedule = (0..BASE_HOURS)
        .map(|h| usize::from(is_weekend(h / 24)) * 24 + h % 24)
        .collect();
    let series = MobilitySeries::new(population, frames, schedule)?;
    check_free_flow_feasible(&series)?;
    Ok(series)
}

/// Verifies that, without restriction, no hour asks a region to send more people than it holds.
fn check_free_flow_feasible(series: &MobilitySeries) -> Result<()> {
    let k = series.num_regions();
    let mut pop = series.population().to_vec();
    for hour in 0..series.horizon() {
        let m = series.demand(hour);
        let out = outflows(m);
        let mut inflow = vec![0.0; k];
        for i in 0..k {
            if out[i] > pop[i] * (1.0 + 1e-12) {
                return Err(Error::InvalidParams(format!(
                    "hour {hour}: region {i} demand {:.3} exceeds its population {:.3}",
                    out[i], pop[i]
                )));
            }
            for j in 0..k {
                inflow[j] += m[[i, j]];
            }
        }
        for i in 0..k {
            pop[i] += inflow[i] - out[i];
        }
    }
    Ok(())
}
