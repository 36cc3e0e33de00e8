//! Command-line harness binding scenario generation, simulation, training
//! and evaluation into reproducible experiments.

pub mod commands;
pub mod config;
pub mod error;

use std::ffi::OsString;
use std::path::PathBuf;

use clap::{Parser, Subcommand};

use perpl::engine::ControllerKind;
use perpl::scenarios::{ColumnMap, Split};

use commands::{
    cmd_evaluate, cmd_gen, cmd_simulate, cmd_sweep, cmd_train, EvaluateArgs, GenArgs,
    SimulateArgs, SweepArgs, TrainArgs,
};
use config::{resolve_out_dir, ExperimentConfig};
use error::CliError;

#[derive(Parser)]
#[command(
    name = "perpl",
    version,
    about = "Deterministic mixed-platoon cruising simulator: linear headway control with a learned residual and a headway safety projection"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(clap::Args)]
struct Common {
    /// Experiment config file (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed override.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory (created if missing). A relative path lands under
    /// $PERPL_OUTPUT_ROOT when that variable is set.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one episode on a trajectory file and dump trace plus metrics.
    Simulate {
        #[command(flatten)]
        common: Common,
        /// Lead trajectory file (delimiter-separated with a header row).
        #[arg(long)]
        traj: PathBuf,
        /// Policy checkpoint (required for rl and perpl controllers).
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value = "linear")]
        controller: ControllerKind,
        /// Column holding the timestamp.
        #[arg(long, default_value = "time")]
        time_col: String,
        /// Column holding the speed (m/s).
        #[arg(long, default_value = "speed")]
        speed_col: String,
        /// Column holding the acceleration; derived from speeds if absent.
        #[arg(long)]
        accel_col: Option<String>,
        /// Factor converting file timestamps to seconds (0.001 for ms).
        #[arg(long, default_value_t = 1.0)]
        time_scale: f64,
    },
    /// Train a residual (perpl) or standalone (rl) policy with PPO.
    Train {
        #[command(flatten)]
        common: Common,
        /// Manifest file; overrides the config entry.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "train")]
        split: Split,
        #[arg(long, default_value = "perpl")]
        controller: ControllerKind,
        /// Training iterations override.
        #[arg(long)]
        iterations: Option<usize>,
        /// Resume from an existing checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Evaluate a controller over one manifest split.
    Evaluate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "test")]
        split: Split,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long, default_value = "linear")]
        controller: ControllerKind,
    },
    /// Sweep automated-vehicle penetration rates in a long mixed platoon.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Comma-separated penetration rates in [0, 1].
        #[arg(long, default_value = "0,0.2,0.4,0.6,0.8,1.0", value_delimiter = ',')]
        rates: Vec<f64>,
        #[arg(long, default_value_t = 40)]
        followers: usize,
        /// Number of seeded placements per rate.
        #[arg(long, default_value_t = 3)]
        seeds: usize,
        #[arg(long, default_value = "linear")]
        controller: ControllerKind,
        #[arg(long)]
        policy: Option<PathBuf>,
    },
    /// Generate synthetic lead trajectories and a manifest.
    Gen {
        #[command(flatten)]
        common: Common,
        /// sinusoid, brake-pulse, stop-and-go or mixed.
        #[arg(long, default_value = "mixed")]
        kind: String,
        #[arg(long, default_value_t = 20)]
        count: usize,
        #[arg(long, default_value = "train")]
        split: Split,
        /// Additionally emit extremized copies under the extrapolation split.
        #[arg(long)]
        extremize_gain: Option<f64>,
        #[arg(long, default_value_t = -4.0, allow_hyphen_values = true)]
        cap_min: f64,
        #[arg(long, default_value_t = 3.0)]
        cap_max: f64,
    },
}

fn load_config(common: &Common) -> Result<ExperimentConfig, CliError> {
    let mut cfg = match &common.config {
        Some(path) => ExperimentConfig::load(path)?,
        None => ExperimentConfig::default(),
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// Parse `args` and run the selected command.
pub fn run<I, T>(args: I) -> Result<(), CliError>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = Cli::try_parse_from(args).unwrap_or_else(|e| e.exit());
    match cli.cmd {
        Cmd::Simulate {
            common,
            traj,
            policy,
            controller,
            time_col,
            speed_col,
            accel_col,
            time_scale,
        } => {
            let cfg = load_config(&common)?;
            cmd_simulate(
                &cfg,
                &SimulateArgs {
                    traj,
                    policy,
                    controller,
                    column_map: ColumnMap {
                        time: time_col,
                        speed: speed_col,
                        accel: accel_col,
                        time_scale,
                    },
                    out: resolve_out_dir(&common.out),
                },
            )
        }
        Cmd::Train {
            common,
            manifest,
            split,
            controller,
            iterations,
            resume,
        } => {
            let mut cfg = load_config(&common)?;
            if let Some(iters) = iterations {
                cfg.train_iterations = iters;
            }
            cmd_train(
                &cfg,
                &TrainArgs {
                    manifest,
                    split,
                    controller,
                    resume,
                    out: resolve_out_dir(&common.out),
                },
            )
        }
        Cmd::Evaluate {
            common,
            manifest,
            split,
            policy,
            controller,
        } => {
            let cfg = load_config(&common)?;
            cmd_evaluate(
                &cfg,
                &EvaluateArgs {
                    manifest,
                    split,
                    policy,
                    controller,
                    out: resolve_out_dir(&common.out),
                },
            )
        }
        Cmd::Sweep {
            common,
            rates,
            followers,
            seeds,
            controller,
            policy,
        } => {
            let cfg = load_config(&common)?;
            cmd_sweep(
                &cfg,
                &SweepArgs {
                    rates,
                    followers,
                    seeds,
                    controller,
                    policy,
                    out: resolve_out_dir(&common.out),
                },
            )
        }
        Cmd::Gen {
            common,
            kind,
            count,
            split,
            extremize_gain,
            cap_min,
            cap_max,
        } => {
            let cfg = load_config(&common)?;
            cmd_gen(
                &cfg,
                &GenArgs {
                    kind,
                    count,
                    split,
                    extremize_gain,
                    cap_min,
                    cap_max,
                    out: resolve_out_dir(&common.out),
                },
            )
        }
    }
}
