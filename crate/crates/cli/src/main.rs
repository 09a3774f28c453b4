//! `wblcmp`: render scenarios, enhance mixtures, score results and sweep the
//! beamformer time constant.

mod commands;
mod config;
mod io;

use std::path::PathBuf;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use wblcmp::Mode;

use config::RunConfig;

#[derive(Parser)]
#[command(name = "wblcmp", version, about = "Adaptive sparse convolutional beamforming for binaural hearing devices")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

/// Options shared by every subcommand; they override the config file.
#[derive(Args, Debug, Clone, Default)]
pub struct Common {
    /// TOML run configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Scenario seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Scenario preset used when the config names no scenario.
    #[arg(long, global = true)]
    preset: Option<String>,
    #[arg(long, global = true)]
    mode: Option<Mode>,
    /// Shape parameter of the lp cost, in [0, 2].
    #[arg(long, global = true)]
    p: Option<f64>,
    /// Beamformer time constant in milliseconds.
    #[arg(long = "t-gamma-ms", global = true)]
    t_gamma_ms: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Render a scenario to mixture.wav, reference.wav and scenario.toml.
    Simulate,
    /// Enhance a multichannel mixture into a left/right pair.
    Enhance {
        mixture: PathBuf,
        /// Scenario sidecar with the frame labels; defaults to the one next
        /// to the mixture.
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Score an enhanced pair against a simulated bundle.
    Evaluate { bundle: PathBuf, enhanced: PathBuf },
    /// Enhance and score every (t_gamma, p) cell plus the non-adaptive runs.
    Sweep {
        /// Record wall-clock runtime per cell.
        #[arg(long)]
        timing: bool,
    },
}

fn main() -> Result<()> {
    let cli = Cli::parse();
    let cfg = RunConfig::resolve(&cli.common)?;
    match cli.command {
        Command::Simulate => commands::simulate(&cfg),
        Command::Enhance { mixture, sidecar } => commands::enhance_file(&cfg, &mixture, sidecar.as_ref()),
        Command::Evaluate { bundle, enhanced } => commands::evaluate_file(&cfg, &bundle, &enhanced),
        Command::Sweep { timing } => commands::sweep(&cfg, timing),
    }
}
