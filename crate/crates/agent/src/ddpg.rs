use std::path::Path;
use std::sync::Arc;

use epiflow_core::experts::pseudo_expert;
use epiflow_core::Observation;
use epiflow_nn::{clip_global_norm, read_checkpoint, write_checkpoint, Adam, ParamSet, Tape};
use ndarray::Array2;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::config::AgentConfig;
use crate::error::{AgentError, Result};
use crate::exploration::{action_distance, ExpertSchedule, ParamNoise};
use crate::features::{Batch, GraphInput};
use crate::networks::{Actor, Critic};

#[derive(Clone, Debug)]
pub struct Transition {
    pub state: Arc<GraphInput>,
    pub action: Array2<f64>,
    pub reward: f64,
    pub next_state: Arc<GraphInput>,
    pub done: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionSource {
    Agent,
    Expert,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Losses {
    pub critic: f64,
    /// Mean critic value of the actor's actions.
    pub actor_objective: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Ddpg {
    pub config: AgentConfig,
    pub actor: Actor,
    pub critic: Critic,
    pub actor_target: Actor,
    pub critic_target: Critic,
    pub actor_opt: Adam,
    pub critic_opt: Adam,
    pub noise: ParamNoise,
    pub schedule: ExpertSchedule,
    pub updates: u64,
    #[serde(skip)]
    perturbed: Option<Actor>,
}

impl Ddpg {
    pub fn new<R: Rng + ?Sized>(config: AgentConfig, depth: usize, schedule: ExpertSchedule, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let actor = Actor::new(config.graph_kind, depth, config.hidden_width, rng);
        let critic = Critic::new(config.graph_kind, depth, config.hidden_width, rng);
        Ok(Self {
            actor_opt: Adam::new(&actor.params, config.actor_lr),
            critic_opt: Adam::new(&critic.params, config.critic_lr),
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            noise: ParamNoise::new(
                config.noise_initial_std,
                config.noise_target_distance,
                config.noise_adapt_factor,
            ),
            actor,
            critic,
            schedule,
            updates: 0,
            perturbed: None,
            config,
        })
    }

    /// Draws a fresh perturbed actor for the next episode.
    pub fn begin_episode<R: Rng + ?Sized>(&mut self, rng: &mut R) {
        let mut perturbed = self.actor.clone();
        perturbed.params = self.noise.perturb(&self.actor.params, rng);
        self.perturbed = Some(perturbed);
    }

    /// Train mode takes the pseudo-expert action with the scheduled probability and otherwise
    /// the perturbed actor's, adapting the noise scale; eval mode uses the clean actor.
    pub fn select_action<R: Rng + ?Sized>(
        &mut self,
        obs: &Observation,
        input: &GraphInput,
        step: u64,
        mode: Mode,
        rng: &mut R,
    ) -> Result<(Array2<f64>, ActionSource)> {
        if mode == Mode::Eval {
            return Ok((self.actor.rates(input)?, ActionSource::Agent));
        }
        let eps = self.schedule.probability(step);
        if eps > 0.0 && rng.random::<f64>() < eps {
            let q = pseudo_expert(&obs.visible.h, &obs.loss)?;
            return Ok((q.into_array(), ActionSource::Expert));
        }
        if self.perturbed.is_none() {
            self.begin_episode(rng);
        }
        let perturbed = self.perturbed.as_ref().expect("set above").rates(input)?;
        if self.noise.std > 0.0 {
            let clean = self.actor.rates(input)?;
            self.noise.adapt(action_distance(&perturbed, &clean));
        }
        Ok((perturbed, ActionSource::Agent))
    }

    pub fn train_step(&mut self, batch: &[&Transition]) -> Result<Losses> {
        if batch.is_empty() {
            return Err(AgentError::NotEnoughSamples { have: 0, need: 1 });
        }
        let n = batch.len();
        let states: Vec<&GraphInput> = batch.iter().map(|t| &*t.state).collect();
        let next: Vec<&GraphInput> = batch.iter().map(|t| &*t.next_state).collect();
        let s = Batch::stack(&states);
        let s_next = Batch::stack(&next);
        let k = s.num_regions;

        let targets = self.targets_for(&s_next, batch)?;

        let mut actions = Array2::zeros((n * k, k));
        for (b, t) in batch.iter().enumerate() {
            actions.slice_mut(ndarray::s![b * k..(b + 1) * k, ..]).assign(&t.action);
        }
        let critic_loss = {
            let mut tape = Tape::new();
            let bc = self.critic.params.bind(&mut tape);
            let a = tape.input(actions);
            let q = self.critic.forward(&mut tape, &bc, &s, a)?;
            let diff: Vec<f64> = tape.value(q).iter().zip(&targets).map(|(q, y)| q - y).collect();
            let loss = diff.iter().map(|d| d * d).sum::<f64>() / n as f64;
            if !loss.is_finite() {
                return Err(AgentError::NonFinite(format!("critic loss after {} updates", self.updates)));
            }
            let seed = Array2::from_shape_fn((n, 1), |(b, _)| 2.0 * diff[b] / n as f64);
            let grads = tape.backward(q, seed)?;
            let mut g = self.critic.params.gradients(&bc, &grads);
            clip(&mut g, self.config.grad_clip);
            self.critic_opt.update(&mut self.critic.params, &g)?;
            loss
        };

        let actor_objective = {
            let mut tape = Tape::new();
            let ba = self.actor.params.bind(&mut tape);
            let bc = self.critic.params.bind_frozen(&mut tape);
            let p = self.actor.forward(&mut tape, &ba, &s)?;
            let q = self.critic.forward(&mut tape, &bc, &s, p)?;
            let objective = tape.value(q).mean().unwrap_or(0.0);
            if !objective.is_finite() {
                return Err(AgentError::NonFinite(format!("actor objective after {} updates", self.updates)));
            }
            let grads = tape.backward(q, Array2::from_elem((n, 1), -1.0 / n as f64))?;
            let mut g = self.actor.params.gradients(&ba, &grads);
            clip(&mut g, self.config.grad_clip);
            self.actor_opt.update(&mut self.actor.params, &g)?;
            objective
        };

        self.soft_update(self.config.tau)?;
        self.updates += 1;
        Ok(Losses {
            critic: critic_loss,
            actor_objective,
        })
    }

    pub fn soft_update(&mut self, tau: f64) -> Result<()> {
        self.actor_target.params.soft_update(&self.actor.params, tau)?;
        self.critic_target.params.soft_update(&self.critic.params, tau)?;
        Ok(())
    }

    /// Mean squared TD error on `batch` without updating anything.
    pub fn critic_loss(&self, batch: &[&Transition]) -> Result<f64> {
        let n = batch.len();
        let states: Vec<&GraphInput> = batch.iter().map(|t| &*t.state).collect();
        let s = Batch::stack(&states);
        let k = s.num_regions;
        let targets = self.targets(batch)?;
        let mut tape = Tape::new();
        let bc = self.critic.params.bind_frozen(&mut tape);
        let mut actions = Array2::zeros((n * k, k));
        for (b, t) in batch.iter().enumerate() {
            actions.slice_mut(ndarray::s![b * k..(b + 1) * k, ..]).assign(&t.action);
        }
        let a = tape.input(actions);
        let q = self.critic.forward(&mut tape, &bc, &s, a)?;
        let qv = tape.value(q);
        Ok(targets.iter().enumerate().map(|(b, y)| (qv[[b, 0]] - y).powi(2)).sum::<f64>() / n as f64)
    }

    /// Critic regression targets `scale · r + γ (1 − done) Q'(s', μ'(s'))`.
    pub fn targets(&self, batch: &[&Transition]) -> Result<Vec<f64>> {
        let next: Vec<&GraphInput> = batch.iter().map(|t| &*t.next_state).collect();
        self.targets_for(&Batch::stack(&next), batch)
    }

    fn targets_for(&self, s_next: &Batch, batch: &[&Transition]) -> Result<Vec<f64>> {
        let mut tape = Tape::new();
        let ba = self.actor_target.params.bind_frozen(&mut tape);
        let bc = self.critic_target.params.bind_frozen(&mut tape);
        let p = self.actor_target.forward(&mut tape, &ba, s_next)?;
        let q = self.critic_target.forward(&mut tape, &bc, s_next, p)?;
        let next_values = tape.value(q);
        Ok(batch
            .iter()
            .enumerate()
            .map(|(b, t)| {
                let bootstrap = if t.done { 0.0 } else { self.config.gamma * next_values[[b, 0]] };
                self.config.reward_scale * t.reward + bootstrap
            })
            .collect())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        Ok(write_checkpoint(path, self)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let agent: Ddpg = read_checkpoint(path)?;
        agent.config.validate()?;
        for params in [&agent.actor.params, &agent.actor_target.params] {
            params.check_compatible(&agent.actor.params)?;
        }
        agent.critic_target.params.check_compatible(&agent.critic.params)?;
        Ok(agent)
    }

    pub fn actor_params(&self) -> &ParamSet {
        &self.actor.params
    }
}

fn clip(grads: &mut [Array2<f64>], max_norm: f64) {
    if max_norm > 0.0 {
        clip_global_norm(grads, max_norm);
    }
}
