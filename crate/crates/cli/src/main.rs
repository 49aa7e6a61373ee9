use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};
use stockcast_cli::runner::{EXIT_OK, EXIT_USAGE};
use stockcast_cli::{cmd_explain, cmd_featurize, cmd_run, cmd_sweep, cmd_validate, ExperimentConfig};
use stockcast_core::market_data::write_ohlcv_csv;
use stockcast_core::{synthetic_series, ModelKind};

#[derive(Parser)]
#[command(
    name = "stockcast",
    version,
    about = "Forecast daily closes and explain the forecasts"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Check an OHLCV CSV and list every finding.
    Validate { csv: PathBuf },
    /// Write the indicator feature table for an OHLCV CSV.
    Featurize {
        csv: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Defaults to the file stem.
        #[arg(long)]
        symbol: Option<String>,
    },
    /// Train, evaluate and explain every (symbol, model) pair.
    Run(ExperimentArgs),
    /// Train every model at each sweep sequence length.
    Sweep(ExperimentArgs),
    /// Recompute attributions from saved checkpoints.
    Explain(ExperimentArgs),
    /// Write the seeded synthetic benchmark series as an OHLCV CSV.
    Synthetic {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 600)]
        rows: usize,
        #[arg(long, default_value_t = 0.05)]
        noise: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
}

#[derive(Args)]
struct ExperimentArgs {
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides the config.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Emit SVG charts for forecasts and loss curves.
    #[arg(long)]
    plots: bool,
    /// Restrict to one model kind.
    #[arg(long)]
    model: Option<ModelKind>,
    /// Sequence length for every model (for `sweep`, the only length tried).
    #[arg(long)]
    seq_len: Option<usize>,
}

impl ExperimentArgs {
    fn load(&self) -> Result<ExperimentConfig> {
        let mut cfg = ExperimentConfig::load(&self.config)?;
        if let Some(out) = &self.out {
            cfg.output_dir = out.clone();
        }
        if let Some(seed) = self.seed {
            cfg.seed = seed;
        }
        cfg.plots |= self.plots;
        if let Some(kind) = self.model {
            cfg.models = vec![kind];
        }
        if let Some(l) = self.seq_len {
            for &kind in &cfg.models {
                cfg.overrides.entry(kind).or_default().seq_len = Some(l);
            }
            cfg.sweep = vec![l];
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn dispatch(cli: Cli) -> Result<i32> {
    match cli.command {
        Command::Validate { csv } => Ok(cmd_validate(&csv, &mut std::io::stdout().lock())),
        Command::Featurize { csv, out, symbol } => {
            let symbol = symbol.unwrap_or_else(|| {
                csv.file_stem()
                    .map_or_else(|| "series".to_string(), |s| s.to_string_lossy().into_owned())
            });
            cmd_featurize(&csv, &symbol, &out)
        }
        Command::Run(args) => Ok(cmd_run(&args.load()?)?.exit_code()),
        Command::Sweep(args) => Ok(cmd_sweep(&args.load()?)?.exit_code()),
        Command::Explain(args) => {
            // checkpoints come from the config's output directory; --out only redirects the results
            let out = args.out.clone();
            let mut a = args;
            a.out = None;
            let cfg = a.load()?;
            let dest = out.unwrap_or_else(|| cfg.output_dir.clone());
            cmd_explain(&cfg, &dest)
        }
        Command::Synthetic { out, rows, noise, seed } => {
            let series = synthetic_series("SYNTH", rows, noise, seed);
            let mut buf = Vec::new();
            write_ohlcv_csv(&series, &mut buf)?;
            std::fs::write(&out, buf).with_context(|| format!("cannot write {}", out.display()))?;
            Ok(EXIT_OK)
        }
    }
}

fn main() -> ExitCode {
    let code = match dispatch(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            EXIT_USAGE
        }
    };
    ExitCode::from(code as u8)
}
