use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use jointcast_cli::{execute, exit_code, RunConfig, Stage};

/// Joint generative forecasting of chaotic systems.
#[derive(Debug, Parser)]
#[command(name = "jointcast", version, about)]
struct Cli {
    /// Config file of `section.key = value` lines.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Built-in preset applied before the config file.
    #[arg(long, global = true)]
    preset: Option<String>,
    /// Root seed for every random stream.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads (0 = all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Override one setting, e.g. `--set train.epochs=5`; repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Integrate the system and write the trajectory.
    Simulate,
    /// Sample training windows from the training span.
    MakeDataset,
    /// Train the joint model.
    Train,
    /// Forecast from test initial conditions.
    Forecast {
        /// Sieve oracle clouds built from the true dynamics instead of the model.
        #[arg(long)]
        oracle: bool,
    },
    /// MAE curves, climatology and distribution comparison.
    Evaluate,
    /// Ensemble uncertainty metrics and their regressions on the error.
    Uq,
    /// Gather summaries and plot-ready tables.
    Report,
    /// Every stage in order.
    Run,
    /// Print the resolved configuration.
    Config,
}

fn resolve(cli: &Cli) -> Result<RunConfig> {
    let mut cfg = RunConfig::default();
    if let Some(p) = &cli.preset {
        cfg.apply_preset(p)?;
    }
    if let Some(path) = &cli.config {
        let text = std::fs::read_to_string(path).with_context(|| format!("reading config {}", path.display()))?;
        cfg.apply_text(&text).with_context(|| format!("in {}", path.display()))?;
    }
    for pair in &cli.overrides {
        cfg.apply_override(pair)?;
    }
    if let Some(seed) = cli.seed {
        cfg.seed = Some(seed);
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    if let Some(t) = cli.threads {
        cfg.threads = t;
    }
    if let Command::Forecast { oracle: true } = cli.command {
        cfg.oracle = true;
    }
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = resolve(cli)?;
    match cli.command {
        Command::Simulate => execute(Stage::Simulate, &cfg),
        Command::MakeDataset => execute(Stage::MakeDataset, &cfg),
        Command::Train => execute(Stage::Train, &cfg),
        Command::Forecast { .. } => execute(Stage::Forecast, &cfg),
        Command::Evaluate => execute(Stage::Evaluate, &cfg),
        Command::Uq => execute(Stage::Uq, &cfg),
        Command::Report => execute(Stage::Report, &cfg),
        Command::Run => Stage::PIPELINE.iter().try_for_each(|&s| execute(s, &cfg)),
        Command::Config => {
            cfg.validate()?;
            print!("{}", cfg.to_text());
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
