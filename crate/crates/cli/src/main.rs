//! Command-line runner for reproducible dynhtm experiments.

mod commands;
mod config;
mod output;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{Command, RunError};
use config::ExperimentConfig;
use output::{Format, Manifest};

#[derive(Parser)]
#[command(
    name = "dynhtm",
    version,
    about = "Reconstruct, forecast and compare dynamical systems from time series"
)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
    /// JSON experiment config; defaults apply to every missing key.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Rendering of tabular outputs.
    #[arg(long, global = true, value_enum, default_value_t = Format::Csv)]
    format: Format,
}

#[derive(Subcommand)]
enum Cmd {
    /// Integrate the system and write the trajectory and observed series.
    Generate,
    /// Delay-embed the series, estimating lag and dimension when unset.
    Embed,
    /// Near-neighbour forecasts on held-out points.
    Forecast,
    /// Track which parameter regime's predictions come true.
    Regimes,
    /// L-index, synchrony verdict and cross-map skill for a pair of series.
    Causality,
    /// Feed the encoded trajectory through the transition memory and pooler.
    Htm,
    /// Re-run a recorded experiment and check its outputs match.
    Replay { manifest: PathBuf },
}

fn load_config(path: Option<&Path>, seed: Option<u64>) -> Result<ExperimentConfig, RunError> {
    let mut cfg = match path {
        Some(p) => {
            let text = std::fs::read_to_string(p).map_err(|e| RunError::Usage(format!("{}: {e}", p.display())))?;
            ExperimentConfig::parse(&text)?
        }
        None => ExperimentConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

fn replay(path: &Path, out: &Path) -> Result<(), RunError> {
    let text = std::fs::read_to_string(path).map_err(|e| RunError::Usage(format!("{}: {e}", path.display())))?;
    let recorded: Manifest =
        serde_json::from_str(&text).map_err(|e| RunError::Usage(format!("{}: {e}", path.display())))?;
    let cmd = Command::from_name(&recorded.command)
        .ok_or_else(|| RunError::Usage(format!("unknown command {:?} in manifest", recorded.command)))?;
    let cfg = ExperimentConfig::parse(&recorded.config.to_json())?;
    let fresh = commands::run(cmd, &cfg, out, recorded.format)?;
    let mismatched: Vec<&String> = recorded
        .outputs
        .iter()
        .filter(|(name, digest)| fresh.outputs.get(*name) != Some(digest))
        .map(|(name, _)| name)
        .collect();
    if !mismatched.is_empty() || fresh.outputs.len() != recorded.outputs.len() || fresh.inputs != recorded.inputs {
        return Err(RunError::Runtime(format!(
            "replay differs from the manifest: {mismatched:?}"
        )));
    }
    println!(
        "replay of {} matches ({} outputs)",
        recorded.command,
        fresh.outputs.len()
    );
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Cmd::Replay { manifest } => replay(manifest, &cli.out),
        other => {
            let cmd = match other {
                Cmd::Generate => Command::Generate,
                Cmd::Embed => Command::Embed,
                Cmd::Forecast => Command::Forecast,
                Cmd::Regimes => Command::Regimes,
                Cmd::Causality => Command::Causality,
                Cmd::Htm => Command::Htm,
                Cmd::Replay { .. } => unreachable!(),
            };
            load_config(cli.config.as_deref(), cli.seed)
                .and_then(|cfg| commands::run(cmd, &cfg, &cli.out, cli.format))
                .map(|m| {
                    println!(
                        "{}: wrote {} files to {}",
                        m.command,
                        m.outputs.len() + 1,
                        cli.out.display()
                    )
                })
        }
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(RunError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(RunError::Runtime(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
