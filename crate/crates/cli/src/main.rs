use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;

/// Contraction certificates and switching-controller design for bimodal
/// Filippov systems.
#[derive(Debug, Parser)]
#[command(name = "contraswitch", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print μ1, μ2 and μ∞ of the open-loop Jacobian at a point.
    Measure {
        #[command(flatten)]
        common: Common,
        /// Comma-separated state, e.g. `0,4`.
        #[arg(long, value_delimiter = ',', allow_hyphen_values = true, required = true)]
        point: Vec<f64>,
    },
    /// Check the closed-loop contraction conditions on the region grid.
    Certify {
        #[command(flatten)]
        common: Common,
    },
    /// Build H from the open-loop measure and search gains for u⁺.
    Synthesize {
        #[command(flatten)]
        common: Common,
    },
    /// Simulate the closed loop from the configured initial conditions.
    Simulate {
        #[command(flatten)]
        common: Common,
    },
    /// Run a built-in worked example end to end.
    Reproduce {
        #[arg(value_parser = ["example1", "example2"])]
        name: String,
        #[command(flatten)]
        overrides: Overrides,
    },
}

#[derive(Debug, Args, Clone, Default)]
pub struct Common {
    /// Project file (JSON).
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Use a built-in project instead of a file.
    #[arg(long, conflicts_with = "config", value_parser = ["example1", "example2"])]
    pub example: Option<String>,
    #[command(flatten)]
    pub overrides: Overrides,
}

#[derive(Debug, Args, Clone, Default)]
pub struct Overrides {
    /// Output directory.
    #[arg(long, default_value = ".")]
    pub out: PathBuf,
    /// Matrix measure: 1, 2 or inf.
    #[arg(long)]
    pub measure: Option<String>,
    /// Target contraction rate c̄.
    #[arg(long)]
    pub cbar: Option<f64>,
    /// Grid nodes per axis.
    #[arg(long)]
    pub grid: Option<usize>,
    /// Simulation step.
    #[arg(long)]
    pub step: Option<f64>,
    /// Replacement for unbounded region limits.
    #[arg(long)]
    pub truncate: Option<f64>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Measure { common, point } => commands::measure(&common, &point),
        Command::Certify { common } => commands::certify(&common),
        Command::Synthesize { common } => commands::synthesize(&common),
        Command::Simulate { common } => commands::simulate(&common),
        Command::Reproduce { name, overrides } => commands::reproduce(&name, &overrides),
    };
    match result {
        Ok(code) => ExitCode::from(code as u8),
        Err(e) => {
            eprintln!("error: {:#}", e.error);
            ExitCode::from(e.code as u8)
        }
    }
}
