//! `drfree`: batch experiment driver for the robust free-energy engine.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use drfree_core::policy::Engine;

use commands::{invalid, CmdError, Fault};
use config::{load, parse_list, parse_point, Experiment, Overrides};

#[derive(Debug, Parser)]
#[command(name = "drfree", version, about = "Robust free-energy policies, navigation benchmark and cost reconstruction")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args)]
struct Common {
    /// Experiment configuration (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    engine: Option<Engine>,
    #[arg(long)]
    radius_scale: Option<f64>,
    /// Comma-separated seeds, e.g. "0,1,2".
    #[arg(long)]
    seeds: Option<String>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl Common {
    fn experiment(&self) -> Result<Experiment, CmdError> {
        let seeds = self.seeds.as_deref().map(parse_list::<u64>).transpose().map_err(|e| invalid(anyhow::anyhow!("--seeds: {e}")))?;
        let o = Overrides { engine: self.engine, radius_scale: self.radius_scale, seeds, out: self.out.clone() };
        load(self.config.as_deref(), &o).map_err(invalid)
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run every (start, seed) episode and write the logs.
    Run {
        #[command(flatten)]
        common: Common,
    },
    /// Policy divergence from the unaware engine and success rate per radius scale.
    SweepRadius {
        #[command(flatten)]
        common: Common,
        /// Comma-separated radius scales.
        #[arg(long, default_value = "0.5,0.3,0.1,0.01,0")]
        scales: String,
        /// Only compute the probe-state columns.
        #[arg(long)]
        skip_episodes: bool,
    },
    /// Policy over a 50x50 action grid at one state.
    Heatmap {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value = "-0.5,-0.5", allow_hyphen_values = true)]
        probe: String,
    },
    /// Check the scalar dual against the brute-force primal on random instances.
    VerifyDual {
        #[arg(long, default_value_t = 200)]
        instances: usize,
        #[arg(long, default_value_t = 7)]
        seed: u64,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, hide = true)]
        fault: Option<Fault>,
    },
    /// Fit cost weights to logged state-action pairs.
    Reconstruct {
        #[command(flatten)]
        common: Common,
        /// Episode CSV file or a directory of them.
        #[arg(long)]
        demos: PathBuf,
        /// Feature basis configuration (JSON).
        #[arg(long)]
        basis: Option<PathBuf>,
        /// Known weights (JSON) to compare the fitted policy against.
        #[arg(long)]
        true_weights: Option<PathBuf>,
    },
}

fn dispatch(cmd: Command) -> Result<(), CmdError> {
    match cmd {
        Command::Run { common } => commands::run(&common.experiment()?),
        Command::SweepRadius { common, scales, skip_episodes } => {
            let scales = parse_list::<f64>(&scales).map_err(|e| invalid(anyhow::anyhow!("--scales: {e}")))?;
            commands::sweep_radius(&common.experiment()?, &scales, skip_episodes)
        }
        Command::Heatmap { common, probe } => {
            let probe = parse_point(&probe).map_err(|e| invalid(anyhow::anyhow!("--probe: {e}")))?;
            commands::heatmap(&common.experiment()?, probe)
        }
        Command::VerifyDual { instances, seed, out, fault } => commands::verify(instances, seed, &out, fault),
        Command::Reconstruct { common, demos, basis, true_weights } => {
            commands::reconstruct(&common.experiment()?, &demos, basis.as_deref(), true_weights.as_deref())
        }
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    if let Ok(v) = std::env::var("DRFREE_THREADS") {
        match v.parse::<usize>() {
            Ok(n) if n > 0 => {
                if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
                    log::warn!("could not size the thread pool: {e}");
                }
            }
            _ => {
                eprintln!("error: DRFREE_THREADS must be a positive integer, got {v:?}");
                return ExitCode::from(2);
            }
        }
    }
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.code() as u8)
        }
    }
}
