use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use epiflow_agent::Ablation;
use epiflow_cli::{commands, Overrides, RunConfig, OUT_ENV};

#[derive(Parser)]
#[command(name = "epiflow", version, about = "Epidemic mobility-control simulation and training")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON run configuration; unspecified fields keep their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Run directory; overrides the config file and the environment.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic city and write it as OD CSV.
    GenData(Common),
    /// Run one episode under a baseline policy or a trained checkpoint.
    Simulate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        policy: Option<String>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Days before the controller starts acting.
        #[arg(long)]
        t_start: Option<usize>,
    },
    /// Train the agent.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        steps: Option<u64>,
        #[arg(long, value_parser = parse_ablation)]
        ablation: Option<Ablation>,
        #[arg(long)]
        t_start: Option<usize>,
    },
    /// Compare the baselines, and optionally a checkpoint, on one fixed initialisation.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        t_start: Option<usize>,
    },
}

fn parse_ablation(s: &str) -> Result<Ablation, String> {
    Ablation::parse(s).ok_or_else(|| format!("unknown ablation {s:?}; expected gnn-mean, gnn-softmax, no-expert or no-thresholds"))
}

fn resolve(common: &Common, overrides: Overrides) -> epiflow_cli::Result<RunConfig> {
    let overrides = Overrides {
        seed: common.seed,
        out: common.out.clone(),
        ..overrides
    };
    RunConfig::resolve(common.config.as_deref(), std::env::var_os(OUT_ENV).map(PathBuf::from), &overrides)
}

fn run(cli: Cli) -> epiflow_cli::Result<()> {
    let manifest = match cli.command {
        Command::GenData(common) => commands::gen_data(&resolve(&common, Overrides::default())?)?,
        Command::Simulate {
            common,
            policy,
            checkpoint,
            t_start,
        } => {
            let config = resolve(&common, Overrides { t_start, ..Default::default() })?;
            commands::simulate(&config, policy.as_deref(), checkpoint.as_deref())?
        }
        Command::Train {
            common,
            steps,
            ablation,
            t_start,
        } => {
            let overrides = Overrides {
                steps,
                ablation,
                t_start,
                ..Default::default()
            };
            commands::train(&resolve(&common, overrides)?)?
        }
        Command::Evaluate {
            common,
            checkpoint,
            t_start,
        } => {
            let config = resolve(&common, Overrides { t_start, ..Default::default() })?;
            commands::evaluate(&config, checkpoint.as_deref())?
        }
    };
    println!("{}: {} files written", manifest.command, manifest.files.len());
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
