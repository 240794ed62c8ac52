use epiflow_core::{ControlEnv, Observation, Policy, QuotaMatrix};

use crate::ddpg::Ddpg;
use crate::features::{FeatureContext, GraphInput};
use crate::networks::Actor;

/// The clean actor driven through the shared [`Policy`] interface.
#[derive(Clone, Debug)]
pub struct AgentPolicy {
    pub name: String,
    actor: Actor,
    gains: [f64; 4],
}

impl AgentPolicy {
    pub fn new(name: impl Into<String>, agent: &Ddpg) -> Self {
        Self {
            name: name.into(),
            actor: agent.actor.clone(),
            gains: agent.config.feature_gains,
        }
    }
}

impl Policy for AgentPolicy {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn act(&mut self, obs: &Observation, env: &ControlEnv) -> epiflow_core::Result<QuotaMatrix> {
        let ctx = FeatureContext::from_env(env, self.gains);
        let input = GraphInput::encode(obs, &ctx);
        let rates = self
            .actor
            .rates(&input)
            .map_err(|e| epiflow_core::Error::State(format!("agent policy: {e}")))?;
        QuotaMatrix::new(rates)
    }
}
