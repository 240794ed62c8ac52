//! Mobility-control environment: four-hour control cadence over hourly SIHR dynamics with the
//! dual-objective (infection cost + escalating restriction cost) reward.

use std::fmt;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mobility::{apply_quota, outflows, MobilitySeries, OdMatrix, QuotaMatrix};
use crate::sihr::{
    seed_infection, step_hour_flagged, visible, visible_delta, DiseaseParams, EpidemicState,
    VisibleDelta, VisibleState,
};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    /// Hours each action is held for.
    pub control_period: usize,
    /// Days of unrestricted spread before the controller acts.
    pub t_start: usize,
    /// Episode length in days, counted from the first seeded infection.
    pub horizon: usize,
    pub k_h: f64,
    pub h_0: f64,
    pub l_0: f64,
    pub lambda: f64,
    /// Regional mean infected count that ends a training episode.
    pub infection_threshold: f64,
    /// Historical mobility loss that ends a training episode.
    pub lockdown_threshold: f64,
    pub enforce_thresholds: bool,
    pub terminal_penalty: f64,
    /// City-wide I and H below this level count as extinct.
    pub extinction_level: f64,
    /// Range of the seeded infected count for random initialisation.
    pub random_seed_count: (f64, f64),
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            control_period: 4,
            t_start: 20,
            horizon: 60,
            k_h: 1.0,
            h_0: 3.0,
            l_0: 72.0,
            lambda: 0.99,
            infection_threshold: 100.0,
            lockdown_threshold: 336.0,
            enforce_thresholds: true,
            terminal_penalty: 1000.0,
            extinction_level: 1e-6,
            random_seed_count: (5.0, 20.0),
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(m.to_string()));
        if self.control_period == 0 || 24 % self.control_period != 0 {
            return bad("control_period must divide 24");
        }
        if !(self.lambda > 0.0 && self.lambda < 1.0) {
            return bad("lambda must lie in (0, 1)");
        }
        if !(self.h_0 > 0.0 && self.l_0 > 0.0 && self.k_h > 0.0) {
            return bad("k_h, h_0 and l_0 must be positive");
        }
        if self.t_start * 24 >= self.horizon * 24 {
            return bad("t_start must be earlier than the horizon");
        }
        let (lo, hi) = self.random_seed_count;
        if !(lo >= 0.0 && hi >= lo) {
            return bad("random_seed_count must be an ordered non-negative range");
        }
        Ok(())
    }

    pub fn horizon_hours(&self) -> usize {
        self.horizon * 24
    }

    pub fn t_start_hours(&self) -> usize {
        self.t_start * 24
    }
}

/// How an episode's first infections are placed.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum EpisodeInit {
    Fixed { region: usize, count: f64 },
    Random { seed: u64 },
}

/// Agent-visible state at a control step.
#[derive(Clone, Debug)]
pub struct Observation {
    pub hour: usize,
    pub visible: VisibleState,
    pub delta: VisibleDelta,
    /// Demand for the next `control_period` hours.
    pub demand_window: Vec<Arc<OdMatrix>>,
    /// Historical mobility loss `L_i`.
    pub loss: Vec<f64>,
}

impl Observation {
    pub fn num_regions(&self) -> usize {
        self.loss.len()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Termination {
    Horizon,
    EpidemicExtinct,
    InfectionThreshold,
    LockdownThreshold,
}

impl Termination {
    pub fn as_str(self) -> &'static str {
        match self {
            Termination::Horizon => "horizon",
            Termination::EpidemicExtinct => "epidemic-extinct",
            Termination::InfectionThreshold => "infection-threshold",
            Termination::LockdownThreshold => "lockdown-threshold",
        }
    }

    /// Whether the episode ended because a training threshold tripped.
    pub fn is_penalized(self) -> bool {
        matches!(
            self,
            Termination::InfectionThreshold | Termination::LockdownThreshold
        )
    }
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug)]
pub struct StepInfo {
    /// Demanded out-flow per region summed over the control period.
    pub demanded_out: Vec<f64>,
    pub allowed_out: Vec<f64>,
    pub infection_cost: f64,
    pub mobility_cost: f64,
    pub penalty: f64,
    pub mean_h: f64,
    pub max_h: f64,
    pub termination: Option<Termination>,
    pub clipped: bool,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub done: bool,
    pub info: StepInfo,
}

/// State at the start of an hour plus what happened during it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct HourRecord {
    pub hour: usize,
    pub intervened: bool,
    pub state: EpidemicState,
    pub demand_out: Vec<f64>,
    pub allowed_out: Vec<f64>,
    pub loss: Vec<f64>,
    pub infection_cost: f64,
    pub mobility_cost: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: usize,
    pub hour: usize,
    pub reward: f64,
    pub penalty: f64,
}

/// Full record of one episode; the input to every metric.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeLog {
    pub num_regions: usize,
    pub control_period: usize,
    pub t_start_hour: usize,
    pub mean_outflow: Vec<f64>,
    pub hours: Vec<HourRecord>,
    pub steps: Vec<StepRecord>,
    pub final_state: EpidemicState,
    pub final_loss: Vec<f64>,
    pub termination: Option<Termination>,
}

impl EpisodeLog {
    pub fn total_reward(&self) -> f64 {
        self.steps.iter().map(|s| s.reward).sum()
    }

    pub fn intervened_hours(&self) -> impl Iterator<Item = &HourRecord> {
        self.hours.iter().filter(|h| h.intervened)
    }
}

/// `k_h · exp(mean_i H_i / H_0)`.
pub fn reward_infection(h: &[f64], k_h: f64, h_0: f64) -> f64 {
    let mean = h.iter().sum::<f64>() / h.len() as f64;
    k_h * (mean / h_0).exp()
}

/// Restricted out-flow of each region normalised by its mean out-flow (0 for zero-demand regions).
pub fn normalized_restriction(demand_out: &[f64], allowed_out: &[f64], mean_outflow: &[f64]) -> Vec<f64> {
    demand_out
        .iter()
        .zip(allowed_out)
        .zip(mean_outflow)
        .map(|((d, a), m)| if *m > 0.0 { (d - a) / m } else { 0.0 })
        .collect()
}

/// `L_i ← λ (L_i + (M_{d,i} − M_{p,i}) / M̄_{d,i})`.
pub fn update_loss(
    loss: &[f64],
    demand_out: &[f64],
    allowed_out: &[f64],
    mean_outflow: &[f64],
    lambda: f64,
) -> Vec<f64> {
    normalized_restriction(demand_out, allowed_out, mean_outflow)
        .into_iter()
        .zip(loss)
        .map(|(l, prev)| lambda * (prev + l))
        .collect()
}

/// `(1/K) Σ_i exp(L_i / L_0) · (M_{d,i} − M_{p,i}) / M̄_{d,i}`.
pub fn reward_mobility(
    loss: &[f64],
    demand_out: &[f64],
    allowed_out: &[f64],
    mean_outflow: &[f64],
    l_0: f64,
) -> f64 {
    let k = loss.len() as f64;
    normalized_restriction(demand_out, allowed_out, mean_outflow)
        .into_iter()
        .zip(loss)
        .map(|(l, prev)| (prev / l_0).exp() * l)
        .sum::<f64>()
        / k
}

/// Training thresholds: regional mean I above `I_t`, or any `L_i` above `L_t` (strict).
pub fn check_termination(state: &EpidemicState, loss: &[f64], config: &EnvConfig) -> Option<Termination> {
    let mean_i = state.city_infected() / state.num_regions() as f64;
    if mean_i > config.infection_threshold {
        return Some(Termination::InfectionThreshold);
    }
    if loss.iter().any(|l| *l > config.lockdown_threshold) {
        return Some(Termination::LockdownThreshold);
    }
    None
}

pub struct ControlEnv {
    series: Arc<MobilitySeries>,
    disease: DiseaseParams,
    config: EnvConfig,
    mean_outflow: Vec<f64>,
    hour: usize,
    state: EpidemicState,
    previous_visible: VisibleState,
    loss: Vec<f64>,
    done: bool,
    active: bool,
    steps: usize,
    log: EpisodeLog,
}

impl ControlEnv {
    pub fn new(series: Arc<MobilitySeries>, disease: DiseaseParams, config: EnvConfig) -> Result<Self> {
        disease.validate()?;
        config.validate()?;
        let k = series.num_regions();
        let mean_outflow: Vec<f64> = series.mean_outflows().iter().map(|m| m.value).collect();
        let state = EpidemicState::susceptible(series.population());
        Ok(Self {
            previous_visible: visible(&state),
            log: EpisodeLog {
                num_regions: k,
                control_period: config.control_period,
                t_start_hour: config.t_start_hours(),
                mean_outflow: mean_outflow.clone(),
                hours: Vec::new(),
                steps: Vec::new(),
                final_state: state.clone(),
                final_loss: vec![0.0; k],
                termination: None,
            },
            series,
            disease,
            config,
            mean_outflow,
            hour: 0,
            state,
            loss: vec![0.0; k],
            done: false,
            active: false,
            steps: 0,
        })
    }

    pub fn series(&self) -> &Arc<MobilitySeries> {
        &self.series
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn disease(&self) -> &DiseaseParams {
        &self.disease
    }

    pub fn num_regions(&self) -> usize {
        self.series.num_regions()
    }

    pub fn mean_outflow(&self) -> &[f64] {
        &self.mean_outflow
    }

    pub fn hour(&self) -> usize {
        self.hour
    }

    pub fn state(&self) -> &EpidemicState {
        &self.state
    }

    pub fn loss(&self) -> &[f64] {
        &self.loss
    }

    pub fn is_done(&self) -> bool {
        self.done
    }

    pub fn log(&self) -> &EpisodeLog {
        &self.log
    }

    pub fn into_log(self) -> EpisodeLog {
        self.log
    }

    /// Allowed out-flow per region for each logged hour so far (warm-up included).
    pub fn allowed_history(&self) -> impl Iterator<Item = &[f64]> + '_ {
        self.log.hours.iter().map(|h| h.allowed_out.as_slice())
    }

    /// Seeds the epidemic, runs `t_start` days without intervention and returns the first
    /// observation.
    pub fn reset(&mut self, init: &EpisodeInit) -> Result<Observation> {
        let k = self.num_regions();
        let fresh = EpidemicState::susceptible(self.series.population());
        self.state = match *init {
            EpisodeInit::Fixed { region, count } => seed_infection(&fresh, region, count)?,
            EpisodeInit::Random { seed } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                let region = rng.random_range(0..k);
                let (lo, hi) = self.config.random_seed_count;
                let count = if hi > lo { rng.random_range(lo..=hi) } else { lo };
                seed_infection(&fresh, region, count.min(fresh.s[region]))?
            }
        };
        self.hour = 0;
        self.loss = vec![0.0; k];
        self.done = false;
        self.active = true;
        self.steps = 0;
        self.previous_visible = visible(&self.state);
        self.log.hours.clear();
        self.log.steps.clear();
        self.log.termination = None;

        while self.hour < self.config.t_start_hours() {
            let demand = self.series.demand_arc(self.hour);
            let out = outflows(&demand);
            let (next, _) = step_hour_flagged(&self.state, &demand, &self.disease)?;
            self.log.hours.push(HourRecord {
                hour: self.hour,
                intervened: false,
                state: self.state.clone(),
                demand_out: out.clone(),
                allowed_out: out,
                loss: self.loss.clone(),
                infection_cost: 0.0,
                mobility_cost: 0.0,
            });
            self.previous_visible = visible(&self.state);
            self.state = next;
            self.hour += 1;
        }
        self.sync_final();
        Ok(self.observation())
    }

    pub fn observation(&self) -> Observation {
        let current = visible(&self.state);
        let delta = visible_delta(&current, &self.previous_visible);
        Observation {
            hour: self.hour,
            visible: current,
            delta,
            demand_window: (0..self.config.control_period)
                .map(|k| self.series.demand_arc(self.hour + k))
                .collect(),
            loss: self.loss.clone(),
        }
    }

    /// Holds `quota` for one control period.
    pub fn step(&mut self, quota: &QuotaMatrix) -> Result<StepOutcome> {
        if !self.active {
            return Err(Error::Protocol("step called before reset"));
        }
        if self.done {
            return Err(Error::Protocol("step called after the episode finished"));
        }
        let k = self.num_regions();
        if quota.num_regions() != k {
            return Err(Error::dims(k, quota.num_regions()));
        }
        let cfg = &self.config;
        let mut demanded = vec![0.0; k];
        let mut allowed = vec![0.0; k];
        let (mut infection_cost, mut mobility_cost) = (0.0, 0.0);
        let mut clipped_any = false;
        for _ in 0..cfg.control_period {
            let demand = self.series.demand(self.hour);
            let controlled = apply_quota(demand, quota)?;
            let d_out = outflows(demand);
            let a_out = outflows(&controlled);
            let r_h = reward_infection(&self.state.h, cfg.k_h, cfg.h_0);
            let r_m = reward_mobility(&self.loss, &d_out, &a_out, &self.mean_outflow, cfg.l_0);
            let (next, clipped) = step_hour_flagged(&self.state, &controlled, &self.disease)?;
            clipped_any |= clipped;
            let next_loss = update_loss(&self.loss, &d_out, &a_out, &self.mean_outflow, cfg.lambda);
            for x in 0..k {
                demanded[x] += d_out[x];
                allowed[x] += a_out[x];
            }
            infection_cost += r_h;
            mobility_cost += r_m;
            self.log.hours.push(HourRecord {
                hour: self.hour,
                intervened: true,
                state: std::mem::replace(&mut self.state, next),
                demand_out: d_out,
                allowed_out: a_out,
                loss: std::mem::replace(&mut self.loss, next_loss),
                infection_cost: r_h,
                mobility_cost: r_m,
            });
            self.previous_visible = visible(&self.log.hours.last().expect("pushed").state);
            self.hour += 1;
        }

        let mut termination = None;
        let mut penalty = 0.0;
        if cfg.enforce_thresholds {
            if let Some(reason) = check_termination(&self.state, &self.loss, cfg) {
                termination = Some(reason);
                penalty = cfg.terminal_penalty;
            }
        }
        if termination.is_none()
            && self.state.city_infected() < cfg.extinction_level
            && self.state.city_hospitalized() < cfg.extinction_level
        {
            termination = Some(Termination::EpidemicExtinct);
        }
        if termination.is_none() && self.hour >= cfg.horizon_hours() {
            termination = Some(Termination::Horizon);
        }
        let reward = -(infection_cost + mobility_cost) - penalty;
        self.done = termination.is_some();
        self.log.steps.push(StepRecord {
            step: self.steps,
            hour: self.hour - cfg.control_period,
            reward,
            penalty,
        });
        self.steps += 1;
        self.log.termination = termination;
        self.sync_final();

        let k_f = k as f64;
        Ok(StepOutcome {
            observation: self.observation(),
            reward,
            done: self.done,
            info: StepInfo {
                demanded_out: demanded,
                allowed_out: allowed,
                infection_cost,
                mobility_cost,
                penalty,
                mean_h: self.state.city_hospitalized() / k_f,
                max_h: self.state.h.iter().copied().fold(0.0, f64::max),
                termination,
                clipped: clipped_any,
            },
        })
    }

    fn sync_final(&mut self) {
        self.log.final_state = self.state.clone();
        self.log.final_loss = self.loss.clone();
    }
}
