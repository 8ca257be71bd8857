//! `absa`: prepare data, train the detector and sentiment predictors,
//! evaluate every query mode, and tabulate the results.

mod commands;
mod config;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use absa_core::encoder::BACKBONE_CACHE_ENV;
use absa_core::{AspectModeKind, EvalMode};
use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use crate::config::{config_error, ConfigError, RunConfig};

const EXIT_CONFIG: u8 = 2;
const EXIT_RUNTIME: u8 = 3;

#[derive(Parser)]
#[command(name = "absa", version, about = "Cross-domain aspect-based sentiment analysis runner")]
#[command(after_help = "Pretrained backbones are looked up under $ABSA_BACKBONE_CACHE.")]
struct Cli {
    /// Run configuration (JSON).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Override the configured output directory.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Parse, filter and split the configured corpora.
    Prepare,
    /// Train the aspect detector.
    TrainDetector,
    /// Train sentiment predictors; without --mode, every one the configured modes need.
    TrainSentiment {
        #[arg(long, value_parser = parse_kind)]
        mode: Option<AspectModeKind>,
    },
    /// Evaluate on the detector corpus's test split; without --mode, every configured mode.
    Eval {
        #[arg(long, value_parser = parse_mode)]
        mode: Option<EvalMode>,
    },
    /// Tabulate the reports of a run directory as text and CSV.
    Report {
        /// Defaults to --out or the configured output directory.
        run_dir: Option<PathBuf>,
    },
}

fn parse_mode(s: &str) -> std::result::Result<EvalMode, String> {
    s.parse().map_err(|e: absa_core::Error| e.to_string())
}

fn parse_kind(s: &str) -> std::result::Result<AspectModeKind, String> {
    match s {
        "right" => Ok(AspectModeKind::Right),
        "all" => Ok(AspectModeKind::All),
        "none" => Ok(AspectModeKind::None),
        other => Err(format!("`{other}` is not a trainable query mode (right, all, none)")),
    }
}

fn load_config(cli: &Cli) -> Result<RunConfig> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| config_error("--config is required for this command"))?;
    let mut cfg = RunConfig::load(path)?;
    if let Some(seed) = cli.seed {
        cfg.set_seed(seed);
    }
    if let Some(out) = &cli.out {
        cfg.out = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Prepare => commands::prepare(&load_config(cli)?),
        Command::TrainDetector => commands::train_detector(&load_config(cli)?),
        Command::TrainSentiment { mode } => {
            let cfg = load_config(cli)?;
            let kinds = match mode {
                Some(k) => vec![*k],
                None => commands::needed_kinds(&cfg.modes),
            };
            for k in kinds {
                commands::train_sentiment(&cfg, k)?;
            }
            Ok(())
        }
        Command::Eval { mode } => {
            let cfg = load_config(cli)?;
            let modes = match mode {
                Some(m) => vec![*m],
                None => cfg.modes.clone(),
            };
            for m in modes {
                let r = commands::eval(&cfg, m)?;
                println!(
                    "{m}: f1_micro {:.4} f1_macro {:.4}",
                    r.get("f1_micro").unwrap_or(f64::NAN),
                    r.get("f1_macro").unwrap_or(f64::NAN)
                );
            }
            Ok(())
        }
        Command::Report { run_dir } => {
            let dir = match (run_dir, &cli.out) {
                (Some(d), _) | (None, Some(d)) => d.clone(),
                (None, None) => load_config(cli)?.out,
            };
            let rows = report::collect(&commands::Layout::new(&dir).reports_dir())?;
            let text = report::render_text(&rows);
            std::fs::write(dir.join("report.txt"), &text).context("writing report.txt")?;
            std::fs::write(dir.join("report.csv"), report::render_csv(&rows)?).context("writing report.csv")?;
            print!("{text}");
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
            if e.downcast_ref::<ConfigError>().is_some() {
                ExitCode::from(EXIT_CONFIG)
            } else {
                if e.to_string().contains(BACKBONE_CACHE_ENV) {
                    eprintln!("hint: set {BACKBONE_CACHE_ENV} to a directory holding the backbone");
                }
                ExitCode::from(EXIT_RUNTIME)
            }
        }
    }
}
