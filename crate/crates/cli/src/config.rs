//! Run configuration: built-in defaults, overlaid by a JSON file, overlaid by command-line flags.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use epiflow_agent::{Ablation, AgentConfig, TrainConfig};
use epiflow_core::{
    derive_seed, generate_synthetic_city, load_od_csv, CityGenParams, DiseaseParams, EnvConfig, EpisodeInit,
    ExpertParams, MobilitySeries,
};
use serde::{Deserialize, Serialize};

use crate::error::{io_at, CliError, Result};

/// Environment variable that overrides the output directory of the config file.
pub const OUT_ENV: &str = "EPIFLOW_OUT";

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Global seed; the city generator, training and every other stream derive from it.
    pub seed: u64,
    /// Run directory; not written to the saved copy.
    #[serde(skip_serializing)]
    pub out: PathBuf,
    /// OD CSV to run on instead of a generated city.
    pub data: Option<PathBuf>,
    /// Generator parameters. `city.seed` is replaced by the seed derived from `seed`.
    pub city: CityGenParams,
    pub disease: DiseaseParams,
    pub env: EnvConfig,
    pub agent: AgentConfig,
    pub train: TrainConfig,
    pub experts: ExpertParams,
    /// Fixed initialisation for simulation and evaluation; defaults to 10 infected in the
    /// middle region.
    pub eval_init: Option<EpisodeInit>,
    /// Intervention delays, in days, of the agent rows of an evaluation.
    pub agent_t_starts: Vec<usize>,
    /// Episode length in days for `simulate` and `evaluate`; `env.horizon` only bounds training.
    pub eval_horizon: usize,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            out: PathBuf::from("runs"),
            data: None,
            city: CityGenParams::default(),
            disease: DiseaseParams::default(),
            env: EnvConfig::default(),
            agent: AgentConfig::default(),
            train: TrainConfig::default(),
            experts: ExpertParams {
                x_q: vec![0.15],
                ..ExpertParams::default()
            },
            eval_init: None,
            agent_t_starts: vec![0, 10, 20],
            eval_horizon: 180,
        }
    }
}

/// Values given on the command line.
#[derive(Clone, Debug, Default)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub out: Option<PathBuf>,
    pub t_start: Option<usize>,
    pub steps: Option<u64>,
    pub ablation: Option<Ablation>,
}

impl RunConfig {
    pub fn from_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(io_at(path))?;
        serde_json::from_str(&text).map_err(|source| CliError::ConfigFile {
            path: path.to_path_buf(),
            source,
        })
    }

    /// Defaults or `file`, then `EPIFLOW_OUT` (passed in as `env_out`), then the flags.
    pub fn resolve(file: Option<&Path>, env_out: Option<PathBuf>, overrides: &Overrides) -> Result<Self> {
        let mut config = match file {
            Some(path) => Self::from_file(path)?,
            None => Self::default(),
        };
        if let Some(out) = env_out.filter(|p| !p.as_os_str().is_empty()) {
            config.out = out;
        }
        if let Some(seed) = overrides.seed {
            config.seed = seed;
        }
        if let Some(out) = &overrides.out {
            config.out = out.clone();
        }
        if let Some(t) = overrides.t_start {
            config.env.t_start = t;
        }
        if let Some(steps) = overrides.steps {
            config.train.total_steps = steps;
        }
        if overrides.ablation.is_some() {
            config.train.ablation = overrides.ablation;
        }
        config.validate()?;
        Ok(config)
    }

    pub fn validate(&self) -> Result<()> {
        if self.data.is_none() {
            self.city.validate()?;
        }
        self.disease.validate()?;
        self.env.validate()?;
        self.agent.validate()?;
        self.experts.validate()?;
        self.eval_env().validate()?;
        if let Some(&t) = self.agent_t_starts.iter().find(|&&t| t >= self.eval_horizon) {
            return Err(CliError::Config(format!(
                "agent_t_starts entry {t} is not earlier than the {}-day evaluation horizon",
                self.eval_horizon
            )));
        }
        if self.out.as_os_str().is_empty() {
            return Err(CliError::Config("out must not be empty".into()));
        }
        Ok(())
    }

    pub fn city_params(&self) -> CityGenParams {
        CityGenParams {
            seed: derive_seed(self.seed, "city"),
            ..self.city.clone()
        }
    }

    /// The configured OD file, or the generated city.
    pub fn series(&self) -> Result<Arc<MobilitySeries>> {
        let series = match &self.data {
            Some(path) => load_od_csv(path)?,
            None => generate_synthetic_city(&self.city_params())?,
        };
        Ok(Arc::new(series))
    }

    pub fn eval_init(&self, num_regions: usize) -> Result<EpisodeInit> {
        let init = self.eval_init.clone().unwrap_or(EpisodeInit::Fixed {
            region: num_regions / 2,
            count: 10.0,
        });
        if let EpisodeInit::Fixed { region, count } = init {
            if region >= num_regions || !(count > 0.0) {
                return Err(CliError::Config(format!(
                    "eval_init needs a region below {num_regions} and a positive count"
                )));
            }
        }
        Ok(init)
    }

    /// Environment settings for evaluation runs, which never end early on training thresholds.
    pub fn eval_env(&self) -> EnvConfig {
        EnvConfig {
            horizon: self.eval_horizon,
            enforce_thresholds: false,
            ..self.env.clone()
        }
    }
}
