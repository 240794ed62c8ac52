use epiflow_nn::GraphKind;
use serde::{Deserialize, Serialize};

use crate::error::{AgentError, Result};

/// Network and learning hyperparameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AgentConfig {
    pub graph_kind: GraphKind,
    pub hidden_width: usize,
    pub gamma: f64,
    pub batch_size: usize,
    pub buffer_capacity: usize,
    pub tau: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    /// Rewards are multiplied by this before entering the critic targets.
    pub reward_scale: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    /// Expert-action probability at step 0.
    pub expert_prob: f64,
    /// Fraction of the training steps over which the expert probability decays to zero.
    pub expert_decay_fraction: f64,
    pub noise_initial_std: f64,
    /// Target RMS distance between perturbed and clean quota rates.
    pub noise_target_distance: f64,
    pub noise_adapt_factor: f64,
    /// Feature gains for the S+I, H, R levels and the three hourly deltas.
    pub feature_gains: [f64; 4],
}

impl Default for AgentConfig {
    fn default() -> Self {
        Self {
            graph_kind: GraphKind::Flow,
            hidden_width: 32,
            gamma: 0.99,
            batch_size: 32,
            buffer_capacity: 100_000,
            tau: 0.001,
            actor_lr: 1e-4,
            critic_lr: 1e-4,
            reward_scale: 0.01,
            grad_clip: 10.0,
            expert_prob: 0.5,
            expert_decay_fraction: 0.5,
            noise_initial_std: 0.05,
            noise_target_distance: 0.1,
            noise_adapt_factor: 1.01,
            feature_gains: [1.0, 1e4, 1e3, 1e4],
        }
    }
}

impl AgentConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AgentError::Config(m.to_string()));
        if self.hidden_width == 0 || self.batch_size == 0 {
            return bad("hidden_width and batch_size must be positive");
        }
        if self.buffer_capacity < self.batch_size {
            return bad("buffer_capacity must be at least batch_size");
        }
        if !(0.0..=1.0).contains(&self.gamma) || !(0.0..=1.0).contains(&self.tau) {
            return bad("gamma and tau must lie in [0, 1]");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.reward_scale > 0.0) {
            return bad("learning rates and reward_scale must be positive");
        }
        if !(0.0..=1.0).contains(&self.expert_prob) || !(self.expert_decay_fraction > 0.0) {
            return bad("expert_prob must lie in [0, 1] and expert_decay_fraction must be positive");
        }
        if !(self.noise_initial_std >= 0.0 && self.noise_target_distance > 0.0 && self.noise_adapt_factor > 1.0)
        {
            return bad("noise parameters out of range");
        }
        if self.grad_clip < 0.0 || self.feature_gains.iter().any(|g| !g.is_finite()) {
            return bad("grad_clip must be non-negative and gains finite");
        }
        Ok(())
    }
}

/// Training variants that each remove one ingredient of the full method.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Ablation {
    GnnMean,
    GnnSoftmax,
    NoExpert,
    NoThresholds,
}

impl Ablation {
    pub fn parse(name: &str) -> Option<Self> {
        match name {
            "gnn-mean" => Some(Ablation::GnnMean),
            "gnn-softmax" => Some(Ablation::GnnSoftmax),
            "no-expert" => Some(Ablation::NoExpert),
            "no-thresholds" => Some(Ablation::NoThresholds),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Ablation::GnnMean => "gnn-mean",
            Ablation::GnnSoftmax => "gnn-softmax",
            Ablation::NoExpert => "no-expert",
            Ablation::NoThresholds => "no-thresholds",
        }
    }
}
