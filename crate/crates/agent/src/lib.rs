//! Actor-critic mobility controller: graph-network actor and critic, replay, parameter noise
//! and pseudo-expert guided exploration.

pub mod buffer;
pub mod config;
pub mod ddpg;
pub mod error;
pub mod exploration;
pub mod features;
pub mod networks;
pub mod policy;
pub mod training;

pub use buffer::ReplayBuffer;
pub use config::{Ablation, AgentConfig};
pub use ddpg::{ActionSource, Ddpg, Losses, Mode, Transition};
pub use error::{AgentError, Result};
pub use exploration::{ExpertSchedule, ParamNoise};
pub use features::{Batch, FeatureContext, GraphInput};
pub use networks::{Actor, Critic};
pub use policy::AgentPolicy;
pub use training::{run_training, EpisodeRow, TrainConfig, TrainingOutput};
