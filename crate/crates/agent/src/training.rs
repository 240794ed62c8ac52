use std::path::{Path, PathBuf};
use std::sync::Arc;

use epiflow_core::{derive_seed, ControlEnv, DiseaseParams, EnvConfig, EpisodeInit, MobilitySeries, QuotaMatrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::buffer::ReplayBuffer;
use crate::config::{Ablation, AgentConfig};
use crate::ddpg::{ActionSource, Ddpg, Mode, Transition};
use crate::error::Result;
use crate::exploration::ExpertSchedule;
use crate::features::{FeatureContext, GraphInput};

pub const TRAINING_LOG_HEADER: [&str; 5] = ["episode", "steps", "reward", "termination_reason", "expert_fraction"];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Environment control steps; each one is followed by one gradient update once the
    /// buffer holds a batch.
    pub total_steps: u64,
    /// Write a checkpoint every this many steps; 0 writes only the final one.
    pub checkpoint_every: u64,
    pub ablation: Option<Ablation>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 400_000,
            checkpoint_every: 50_000,
            ablation: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRow {
    pub episode: usize,
    pub steps: usize,
    pub reward: f64,
    pub termination_reason: String,
    pub expert_fraction: f64,
}

pub struct TrainingOutput {
    pub agent: Ddpg,
    pub episodes: Vec<EpisodeRow>,
    pub checkpoints: Vec<PathBuf>,
}

/// Applies an ablation to the configs and returns the expert schedule to train with.
pub fn configure(
    ablation: Option<Ablation>,
    agent: &mut AgentConfig,
    env: &mut EnvConfig,
    total_steps: u64,
) -> ExpertSchedule {
    match ablation {
        Some(Ablation::GnnMean) => agent.graph_kind = epiflow_nn::GraphKind::Mean,
        Some(Ablation::GnnSoftmax) => agent.graph_kind = epiflow_nn::GraphKind::Softmax,
        Some(Ablation::NoThresholds) => env.enforce_thresholds = false,
        Some(Ablation::NoExpert) => return ExpertSchedule::disabled(),
        None => {}
    }
    let decay = (agent.expert_decay_fraction * total_steps as f64).round() as u64;
    ExpertSchedule::new(agent.expert_prob, decay)
}

/// Trains from scratch. Everything random derives from `seed`; with `out_dir` set, the episode
/// log and checkpoints are written there.
pub fn run_training(
    series: Arc<MobilitySeries>,
    disease: DiseaseParams,
    mut env_config: EnvConfig,
    mut agent_config: AgentConfig,
    train: &TrainConfig,
    seed: u64,
    out_dir: Option<&Path>,
) -> Result<TrainingOutput> {
    let schedule = configure(train.ablation, &mut agent_config, &mut env_config, train.total_steps);
    let mut env = ControlEnv::new(series, disease, env_config)?;
    let ctx = FeatureContext::from_env(&env, agent_config.feature_gains);
    let mut init_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "networks"));
    let mut explore_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "exploration"));
    let mut replay_rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, "replay"));
    let depth = env.config().control_period;
    let mut agent = Ddpg::new(agent_config.clone(), depth, schedule, &mut init_rng)?;
    let mut buffer = ReplayBuffer::new(agent_config.buffer_capacity);
    let mut episodes = Vec::new();
    let mut checkpoints = Vec::new();
    if let Some(dir) = out_dir {
        std::fs::create_dir_all(dir)?;
    }
    let save = |agent: &Ddpg, step: u64, checkpoints: &mut Vec<PathBuf>| -> Result<()> {
        if let Some(dir) = out_dir {
            let path = dir.join(format!("checkpoint-{step:08}.json"));
            agent.save(&path)?;
            checkpoints.push(path);
        }
        Ok(())
    };

    let mut step: u64 = 0;
    while step < train.total_steps {
        let episode = episodes.len();
        agent.begin_episode(&mut explore_rng);
        let init = EpisodeInit::Random {
            seed: derive_seed(seed, &format!("episode-{episode}")),
        };
        let mut obs = env.reset(&init)?;
        let mut input = Arc::new(GraphInput::encode(&obs, &ctx));
        let (mut reward, mut len, mut expert) = (0.0, 0usize, 0usize);
        let reason = loop {
            let (rates, source) = agent.select_action(&obs, &input, step, Mode::Train, &mut explore_rng)?;
            if source == ActionSource::Expert {
                expert += 1;
            }
            let out = env.step(&QuotaMatrix::new(rates.clone())?)?;
            let next = Arc::new(GraphInput::encode(&out.observation, &ctx));
            buffer.push(Transition {
                state: input,
                action: rates,
                reward: out.reward,
                next_state: Arc::clone(&next),
                done: out.done,
            });
            step += 1;
            len += 1;
            reward += out.reward;
            if buffer.len() >= agent_config.batch_size {
                let batch = buffer.sample(&mut replay_rng, agent_config.batch_size);
                agent.train_step(&batch)?;
            }
            if train.checkpoint_every > 0 && step % train.checkpoint_every == 0 && step < train.total_steps {
                save(&agent, step, &mut checkpoints)?;
            }
            if let Some(t) = out.info.termination {
                break t.as_str().to_string();
            }
            if step >= train.total_steps {
                break "truncated".to_string();
            }
            obs = out.observation;
            input = next;
        };
        log::info!("episode {episode}: {len} steps, reward {reward:.3}, {reason}");
        episodes.push(EpisodeRow {
            episode,
            steps: len,
            reward,
            termination_reason: reason,
            expert_fraction: expert as f64 / len as f64,
        });
    }
    save(&agent, step, &mut checkpoints)?;
    if let Some(dir) = out_dir {
        write_training_log(&episodes, &dir.join("training.csv"))?;
    }
    Ok(TrainingOutput {
        agent,
        episodes,
        checkpoints,
    })
}

pub fn write_training_log(rows: &[EpisodeRow], path: &Path) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(TRAINING_LOG_HEADER)?;
    for r in rows {
        w.write_record([
            r.episode.to_string(),
            r.steps.to_string(),
            r.reward.to_string(),
            r.termination_reason.clone(),
            r.expert_fraction.to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}
