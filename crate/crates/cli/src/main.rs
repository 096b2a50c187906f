mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use crate::config::RunConfig;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] chiral_chaos::Error),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Parser)]
#[command(
    name = "chiral-chaos",
    version,
    about = "Chiral chaos simulator for a two-port optomechanical device"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Args, Clone)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long, conflicts_with = "preset")]
    config: Option<PathBuf>,
    /// Name of a bundled configuration.
    #[arg(long)]
    preset: Option<String>,
    /// Output directory.
    #[arg(long, default_value = "out")]
    out: PathBuf,
    /// Worker threads for sweeps.
    #[arg(long, default_value_t = 1)]
    workers: usize,
}

impl Common {
    fn load(&self) -> Result<RunConfig, CliError> {
        match (&self.config, &self.preset) {
            (Some(p), _) => RunConfig::from_file(p),
            (None, Some(n)) => RunConfig::preset(n),
            (None, None) => Ok(RunConfig::default()),
        }
    }
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate one trajectory and write tau, i_a, i_b, q, p.
    Simulate(Common),
    /// Classify one point, or every point of the configured axes.
    Classify(Common),
    /// Both-port classification over the configured axes.
    PhaseDiagram(Common),
    /// Refined maxima of q along one axis.
    Bifurcation(Common),
    /// λ_max at one point or over the configured axes.
    Lyapunov(Common),
    /// Symmetry and chirality of the two ports' λ arrays.
    Metrics(Common),
    /// Closed-form steady state for both ports.
    Steady(Common),
    /// Region of (|ξ|, φ) reachable with two tips.
    Tipmap(Common),
    /// Port-wise critical points and the window between them.
    Window(Common),
    /// Signal detection rates of the single- and dual-port protocols.
    Sense(Common),
    /// List bundled presets.
    Presets,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let run = |common: &Common,
               f: fn(&RunConfig, &Common) -> Result<commands::Outcome, CliError>| {
        let cfg = common.load()?;
        std::fs::create_dir_all(&common.out)?;
        f(&cfg, common)
    };
    let result = match &cli.command {
        Command::Simulate(c) => run(c, commands::simulate),
        Command::Classify(c) => run(c, commands::classify),
        Command::PhaseDiagram(c) => run(c, commands::phase_diagram),
        Command::Bifurcation(c) => run(c, commands::bifurcation),
        Command::Lyapunov(c) => run(c, commands::lyapunov),
        Command::Metrics(c) => run(c, commands::metrics),
        Command::Steady(c) => run(c, commands::steady),
        Command::Tipmap(c) => run(c, commands::tipmap),
        Command::Window(c) => run(c, commands::window),
        Command::Sense(c) => run(c, commands::sense),
        Command::Presets => {
            for n in config::preset_names() {
                println!("{n}");
            }
            Ok(commands::Outcome::default())
        }
    };
    match result {
        Ok(outcome) => {
            for f in &outcome.files {
                eprintln!("wrote {}", f.display());
            }
            if outcome.failed > 0 {
                eprintln!(
                    "{} of {} points failed; see the error column",
                    outcome.failed, outcome.total
                );
                ExitCode::from(2)
            } else {
                ExitCode::SUCCESS
            }
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
