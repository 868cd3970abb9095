mod config;
mod data;
mod error;
mod model_cmds;
mod output;
mod train;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::{
    load, resolve_out, resolve_seed, AnomalyTrain, CorrelateConfig, DistsConfig, GenKpiConfig,
    LstmTrain, RegressionTrain, SimulateConfig, SpatialTrain, ValidateConfig,
};
use crate::error::CliError;
use crate::output::OutDir;

/// Radio-latency model, downlink simulator and predictive-QoS pipelines.
///
/// Exit codes: 0 success, 1 an acceptance bound was missed, 2 bad input,
/// 3 training failure.
#[derive(Parser)]
#[command(name = "pqos", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// JSON config file; omitted fields take their defaults.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config seed and PQOS_SEED.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (default `out`).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate the downlink queue and compare latencies with the analytic law.
    ValidateModel(Common),
    /// Simulate the downlink queue and write packet traces and delay KPIs.
    Simulate(Common),
    /// Generate a synthetic KPI dataset with its cell graph.
    GenKpi(Common),
    /// Correlate each KPI with the latency label.
    Correlate {
        #[command(flatten)]
        common: Common,
        /// KPI CSV to analyze.
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Train and evaluate one predictive-QoS model.
    Train {
        #[arg(value_enum)]
        task: Task,
        #[command(flatten)]
        common: Common,
    },
    /// Tabulate the analytic latency law.
    Dists(Common),
}

#[derive(Clone, Copy, clap::ValueEnum)]
enum Task {
    Regression,
    Anomaly,
    Lstm,
    Spatial,
}

fn run(cli: Cli) -> Result<bool, CliError> {
    match cli.command {
        Command::ValidateModel(c) => {
            let cfg: ValidateConfig = load(c.config.as_deref())?;
            let seed = resolve_seed(c.seed, cfg.seed)?;
            let out = OutDir::create(resolve_out(c.out, cfg.out.clone()))?;
            model_cmds::validate_model(&cfg, seed, &out)
        }
        Command::Simulate(c) => {
            let cfg: SimulateConfig = load(c.config.as_deref())?;
            let seed = resolve_seed(c.seed, cfg.seed)?;
            let out = OutDir::create(resolve_out(c.out, cfg.out.clone()))?;
            model_cmds::simulate(&cfg, seed, &out)
        }
        Command::GenKpi(c) => {
            let cfg: GenKpiConfig = load(c.config.as_deref())?;
            let seed = resolve_seed(c.seed, cfg.seed)?;
            let out = OutDir::create(resolve_out(c.out, cfg.out.clone()))?;
            data::gen_kpi(&cfg, seed, &out)
        }
        Command::Correlate { common: c, data } => {
            let cfg: CorrelateConfig = load(c.config.as_deref())?;
            let data = data.or(cfg.data.clone()).ok_or_else(|| {
                CliError::Input("correlate needs --data or a config with `data`".into())
            })?;
            let out = OutDir::create(resolve_out(c.out, cfg.out.clone()))?;
            data::correlate(&data, &out)
        }
        Command::Dists(c) => {
            let cfg: DistsConfig = load(c.config.as_deref())?;
            let out = OutDir::create(resolve_out(c.out, cfg.out.clone()))?;
            model_cmds::dists(&cfg, &out)
        }
        Command::Train { task, common: c } => {
            macro_rules! train {
                ($ty:ty, $f:path) => {{
                    let cfg: $ty = load(c.config.as_deref())?;
                    let seed = resolve_seed(c.seed, cfg.seed)?;
                    let out = OutDir::create(resolve_out(c.out, cfg.out.clone()))?;
                    $f(&cfg, seed, &out)
                }};
            }
            match task {
                Task::Regression => train!(RegressionTrain, train::regression),
                Task::Anomaly => train!(AnomalyTrain, train::anomaly),
                Task::Lstm => train!(LstmTrain, train::lstm),
                Task::Spatial => train!(SpatialTrain, train::spatial),
            }
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .target(env_logger::Target::Stderr)
        .init();
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
