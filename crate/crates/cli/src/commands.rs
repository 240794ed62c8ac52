//! The four subcommands. Each writes into the run directory, finishing with the manifest.

use std::path::{Path, PathBuf};

use epiflow_agent::{run_training, AgentPolicy, Ddpg};
use epiflow_core::metrics::{export_figure_data, write_episode_csv, write_rewards_csv, write_table_csv, write_trajectory_csv};
use epiflow_core::{
    baseline_policies, compute_metrics, policy_by_name, run_baseline_suite, run_episode, save_od_csv, ControlEnv,
    MetricsReport, Policy, SuiteRow,
};
use serde::Serialize;

use crate::config::RunConfig;
use crate::error::{io_at, CliError, Result};
use crate::manifest::{write_manifest, Manifest};
use crate::report::{validate_report, Report};

fn prepare(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(io_at(dir))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(io_at(path))
}

fn save_config(config: &RunConfig) -> Result<PathBuf> {
    let path = config.out.join("config.json");
    write_json(&path, config)?;
    Ok(path)
}

/// Writes the OD series of the configured city as `od.csv` plus its sidecar.
pub fn gen_data(config: &RunConfig) -> Result<Manifest> {
    prepare(&config.out)?;
    let series = epiflow_core::generate_synthetic_city(&config.city_params())?;
    let csv = config.out.join("od.csv");
    save_od_csv(&series, &csv)?;
    log::info!(
        "{} regions over {} hours written to {}",
        series.num_regions(),
        series.horizon(),
        csv.display()
    );
    let files = vec![csv.clone(), epiflow_core::od_csv::meta_path(&csv), save_config(config)?];
    write_manifest(&config.out, "gen-data", config.seed, &files)
}

/// Policy selection for `simulate`: a checkpoint wins over a policy name.
pub fn load_policy(config: &RunConfig, name: Option<&str>, checkpoint: Option<&Path>) -> Result<Box<dyn Policy>> {
    if let Some(path) = checkpoint {
        if !path.is_file() {
            return Err(CliError::MissingCheckpoint(path.to_path_buf()));
        }
        let agent = Ddpg::load(path)?;
        return Ok(Box::new(AgentPolicy::new("agent", &agent)));
    }
    let name = name.unwrap_or("no-intervention");
    policy_by_name(name, &config.experts).ok_or_else(|| CliError::UnknownPolicy(name.to_string()))
}

#[derive(Serialize)]
struct SimulationSummary<'a> {
    policy: String,
    t_start: usize,
    termination: Option<&'a str>,
    metrics: MetricsReport,
}

/// One episode from the fixed initialisation: logs, metrics and figure data.
pub fn simulate(config: &RunConfig, policy: Option<&str>, checkpoint: Option<&Path>) -> Result<Manifest> {
    let mut policy = load_policy(config, policy, checkpoint)?;
    let series = config.series()?;
    let init = config.eval_init(series.num_regions())?;
    prepare(&config.out)?;
    let mut env = ControlEnv::new(series, config.disease.clone(), config.eval_env())?;
    let log = run_episode(&mut env, policy.as_mut(), &init)?;
    let metrics = compute_metrics(&log)?;
    let dir = &config.out;
    let mut files = vec![dir.join("episode.csv"), dir.join("rewards.csv"), dir.join("trajectory.csv")];
    write_episode_csv(&log, &files[0])?;
    write_rewards_csv(&log, &files[1])?;
    write_trajectory_csv(&log, &files[2])?;
    files.extend(export_figure_data(&log, &dir.join("figures"))?);
    let summary = SimulationSummary {
        policy: policy.name(),
        t_start: config.env.t_start,
        termination: log.termination.map(|t| t.as_str()),
        metrics,
    };
    let metrics_path = dir.join("metrics.json");
    write_json(&metrics_path, &summary)?;
    files.push(metrics_path);
    files.push(save_config(config)?);
    log::info!(
        "{}: reward {:.3}, mean H {:.4}, q {:.4}",
        summary.policy,
        summary.metrics.reward,
        summary.metrics.mean_h,
        summary.metrics.q
    );
    write_manifest(dir, "simulate", config.seed, &files)
}

/// Trains from scratch; checkpoints and `training.csv` land in the run directory.
pub fn train(config: &RunConfig) -> Result<Manifest> {
    let series = config.series()?;
    prepare(&config.out)?;
    let out = run_training(
        series,
        config.disease.clone(),
        config.env.clone(),
        config.agent.clone(),
        &config.train,
        config.seed,
        Some(&config.out),
    )?;
    log::info!("{} episodes, {} checkpoints", out.episodes.len(), out.checkpoints.len());
    let mut files = out.checkpoints.clone();
    files.push(config.out.join("training.csv"));
    files.push(save_config(config)?);
    write_manifest(&config.out, "train", config.seed, &files)
}

/// Baselines at the configured delay, plus agent rows at each `agent_t_starts` delay when a
/// checkpoint is given. Writes `report.json` (validated) and `report.csv`.
pub fn evaluate(config: &RunConfig, checkpoint: Option<&Path>) -> Result<Manifest> {
    let agent = match checkpoint {
        Some(path) if !path.is_file() => return Err(CliError::MissingCheckpoint(path.to_path_buf())),
        Some(path) => Some(Ddpg::load(path)?),
        None => None,
    };
    let series = config.series()?;
    let init = config.eval_init(series.num_regions())?;
    prepare(&config.out)?;
    let env_config = config.eval_env();
    let mut policies = baseline_policies(&config.experts);
    let (mut rows, _) = run_baseline_suite(&series, &config.disease, &env_config, &init, &mut policies)?;
    if let Some(agent) = &agent {
        for &t_start in &config.agent_t_starts {
            let env = epiflow_core::EnvConfig {
                t_start,
                ..env_config.clone()
            };
            let mut policy: Vec<Box<dyn Policy>> = vec![Box::new(AgentPolicy::new("agent", agent))];
            let (agent_rows, _) = run_baseline_suite(&series, &config.disease, &env, &init, &mut policy)?;
            rows.extend(agent_rows);
        }
    }
    for row in &rows {
        log_row(row);
    }
    let report = Report::new(config.seed, series.num_regions(), config.eval_horizon, init, rows);
    let json_path = config.out.join("report.json");
    write_json(&json_path, &report)?;
    let text = std::fs::read_to_string(&json_path).map_err(io_at(&json_path))?;
    validate_report(&serde_json::from_str(&text)?).map_err(CliError::InvalidReport)?;
    let csv_path = config.out.join("report.csv");
    write_table_csv(&report.rows, &csv_path)?;
    let files = vec![json_path, csv_path, save_config(config)?];
    write_manifest(&config.out, "evaluate", config.seed, &files)
}

fn log_row(row: &SuiteRow) {
    match (&row.metrics, &row.error) {
        (Some(m), _) => log::info!(
            "{:>16} t_start {:>2}: reward {:>12.3}  mean H {:>8.4}  q {:.4}",
            row.policy,
            row.t_start,
            m.reward,
            m.mean_h,
            m.q
        ),
        (None, e) => log::warn!("{} t_start {}: failed: {}", row.policy, row.t_start, e.as_deref().unwrap_or("")),
    }
}
