//! Rule-based baselines and the pseudo expert used to guide exploration.
//!
//! All rules decide per origin region and fill the whole row of the quota matrix.

use serde::{Deserialize, Serialize};

use crate::env::{ControlEnv, Observation};
use crate::error::{Error, Result};
use crate::mobility::QuotaMatrix;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExpertParams {
    /// Fixed quota rates; one EP-Fixed baseline per entry.
    pub x_q: Vec<f64>,
    /// Hospitalized threshold for EP-Soft and EP-Hard.
    pub x_h: f64,
    /// Loss cap for EP-Soft.
    pub x_l: f64,
    /// Reopen window of EP-Hard, in days.
    pub x_t: usize,
}

impl Default for ExpertParams {
    fn default() -> Self {
        Self {
            x_q: vec![0.15],
            x_h: 0.0,
            x_l: 168.0,
            x_t: 7,
        }
    }
}

impl ExpertParams {
    pub fn validate(&self) -> Result<()> {
        if self.x_q.iter().any(|q| !(0.0..=1.0).contains(q)) {
            return Err(Error::Config("x_q entries must lie in [0, 1]".into()));
        }
        if !(self.x_h >= 0.0) || !(self.x_l > 0.0) || self.x_t < 1 {
            return Err(Error::Config("require x_h >= 0, x_l > 0 and x_t >= 1".into()));
        }
        Ok(())
    }
}

pub const PSEUDO_EXPERT_X_H: f64 = 1.0;
pub const PSEUDO_EXPERT_X_L: f64 = 168.0;

pub fn ep_fixed(num_regions: usize, x_q: f64) -> Result<QuotaMatrix> {
    QuotaMatrix::uniform(num_regions, x_q)
}

/// Row `i` is closed when `H_i > x_h` and `L_i < x_l`.
pub fn ep_soft(h: &[f64], loss: &[f64], x_h: f64, x_l: f64) -> Result<QuotaMatrix> {
    if h.len() != loss.len() {
        return Err(Error::dims(h.len(), loss.len()));
    }
    let rows: Vec<f64> = h
        .iter()
        .zip(loss)
        .map(|(h, l)| if *h > x_h && *l < x_l { 0.0 } else { 1.0 })
        .collect();
    QuotaMatrix::from_row_rates(&rows)
}

/// Row `i` is closed when `H_i > x_h` and region `i` sent anyone during the reopen window.
/// `None` marks a region whose window reaches before the start of the record; it counts as
/// having moved.
pub fn ep_hard(h: &[f64], recent_allowed_outflow: &[Option<f64>], x_h: f64) -> Result<QuotaMatrix> {
    if h.len() != recent_allowed_outflow.len() {
        return Err(Error::dims(h.len(), recent_allowed_outflow.len()));
    }
    let rows: Vec<f64> = h
        .iter()
        .zip(recent_allowed_outflow)
        .map(|(h, recent)| {
            let moved = recent.is_none_or(|v| v > 0.0);
            if *h > x_h && moved {
                0.0
            } else {
                1.0
            }
        })
        .collect();
    QuotaMatrix::from_row_rates(&rows)
}

pub fn ep_lockdown(h: &[f64], loss: &[f64]) -> Result<QuotaMatrix> {
    ep_soft(h, loss, 0.0, f64::INFINITY)
}

pub fn pseudo_expert(h: &[f64], loss: &[f64]) -> Result<QuotaMatrix> {
    ep_soft(h, loss, PSEUDO_EXPERT_X_H, PSEUDO_EXPERT_X_L)
}

/// A controller that can be driven through [`ControlEnv`].
pub trait Policy {
    fn name(&self) -> String;

    /// Called at the start of every episode.
    fn reset(&mut self) {}

    fn act(&mut self, obs: &Observation, env: &ControlEnv) -> Result<QuotaMatrix>;
}

#[derive(Clone, Debug, Default)]
pub struct NoIntervention;

impl Policy for NoIntervention {
    fn name(&self) -> String {
        "no-intervention".into()
    }

    fn act(&mut self, obs: &Observation, _env: &ControlEnv) -> Result<QuotaMatrix> {
        Ok(QuotaMatrix::ones(obs.num_regions()))
    }
}

#[derive(Clone, Debug)]
pub struct FixedPolicy {
    pub x_q: f64,
}

impl Policy for FixedPolicy {
    fn name(&self) -> String {
        format!("ep-fixed-{}", self.x_q)
    }

    fn act(&mut self, obs: &Observation, _env: &ControlEnv) -> Result<QuotaMatrix> {
        ep_fixed(obs.num_regions(), self.x_q)
    }
}

/// EP-Soft; also EP-Lockdown (`x_l = ∞`) and the pseudo expert, which are special cases.
#[derive(Clone, Debug)]
pub struct SoftPolicy {
    pub label: String,
    pub x_h: f64,
    pub x_l: f64,
}

impl SoftPolicy {
    pub fn soft(x_h: f64, x_l: f64) -> Self {
        Self {
            label: "ep-soft".into(),
            x_h,
            x_l,
        }
    }

    pub fn lockdown() -> Self {
        Self {
            label: "ep-lockdown".into(),
            x_h: 0.0,
            x_l: f64::INFINITY,
        }
    }

    pub fn pseudo_expert() -> Self {
        Self {
            label: "pseudo-expert".into(),
            x_h: PSEUDO_EXPERT_X_H,
            x_l: PSEUDO_EXPERT_X_L,
        }
    }
}

impl Policy for SoftPolicy {
    fn name(&self) -> String {
        self.label.clone()
    }

    fn act(&mut self, obs: &Observation, _env: &ControlEnv) -> Result<QuotaMatrix> {
        ep_soft(&obs.visible.h, &obs.loss, self.x_h, self.x_l)
    }
}

/// EP-Hard, re-evaluated once per day at midnight and held for 24 hours.
#[derive(Clone, Debug)]
pub struct HardPolicy {
    pub x_h: f64,
    pub x_t: usize,
    held: Option<QuotaMatrix>,
}

impl HardPolicy {
    pub fn new(x_h: f64, x_t: usize) -> Self {
        Self { x_h, x_t, held: None }
    }
}

impl Policy for HardPolicy {
    fn name(&self) -> String {
        "ep-hard".into()
    }

    fn reset(&mut self) {
        self.held = None;
    }

    fn act(&mut self, obs: &Observation, env: &ControlEnv) -> Result<QuotaMatrix> {
        if let Some(q) = &self.held {
            if obs.hour % 24 != 0 {
                return Ok(q.clone());
            }
        }
        let window = self.x_t * 24;
        let k = obs.num_regions();
        let recent: Vec<Option<f64>> = if obs.hour < window {
            vec![None; k]
        } else {
            let mut sum = vec![0.0; k];
            for out in env.allowed_history().skip(obs.hour - window).take(window) {
                for (s, o) in sum.iter_mut().zip(out) {
                    *s += o;
                }
            }
            sum.into_iter().map(Some).collect()
        };
        let q = ep_hard(&obs.visible.h, &recent, self.x_h)?;
        self.held = Some(q.clone());
        Ok(q)
    }
}

/// The standard baseline roster: no intervention, one EP-Fixed per `x_q`, EP-Soft, EP-Hard and
/// EP-Lockdown.
pub fn baseline_policies(params: &ExpertParams) -> Vec<Box<dyn Policy>> {
    let mut out: Vec<Box<dyn Policy>> = vec![Box::new(NoIntervention)];
    for &x_q in &params.x_q {
        out.push(Box::new(FixedPolicy { x_q }));
    }
    out.push(Box::new(SoftPolicy::soft(params.x_h, params.x_l)));
    out.push(Box::new(HardPolicy::new(params.x_h, params.x_t)));
    out.push(Box::new(SoftPolicy::lockdown()));
    out
}

/// Looks a baseline up by its CLI name (`ep-fixed` uses the first configured `x_q`).
pub fn policy_by_name(name: &str, params: &ExpertParams) -> Option<Box<dyn Policy>> {
    let policy: Box<dyn Policy> = match name {
        "no-intervention" => Box::new(NoIntervention),
        "ep-fixed" => Box::new(FixedPolicy {
            x_q: *params.x_q.first()?,
        }),
        "ep-soft" => Box::new(SoftPolicy::soft(params.x_h, params.x_l)),
        "ep-hard" => Box::new(HardPolicy::new(params.x_h, params.x_t)),
        "ep-lockdown" => Box::new(SoftPolicy::lockdown()),
        "pseudo-expert" => Box::new(SoftPolicy::pseudo_expert()),
        other => {
            let rate = other.strip_prefix("ep-fixed-")?.parse().ok()?;
            Box::new(FixedPolicy { x_q: rate })
        }
    };
    Some(policy)
}
