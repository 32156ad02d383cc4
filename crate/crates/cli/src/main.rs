//! `pctrees`: synthetic data, label matching, projection, training,
//! evaluation and prediction from one binary.

mod commands;
mod config;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use config::RunConfig;
use error::CliError;

#[derive(Debug, Parser)]
#[command(
    name = "pctrees",
    version,
    about = "Tree-species classification from individual LiDAR point clouds"
)]
struct Cli {
    #[command(flatten)]
    globals: Globals,
    #[command(subcommand)]
    command: Command,
}

/// Configuration sources. Files apply first (in order), then `--set`, then
/// the dedicated flags.
#[derive(Debug, Args)]
struct Globals {
    /// key=value config file; may repeat.
    #[arg(long, global = true, value_name = "PATH")]
    config: Vec<PathBuf>,
    /// Single key=value override; may repeat.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Root seed for every random choice.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// baseline | baselinepp | pctrees
    #[arg(long, global = true)]
    model: Option<String>,
    /// Clouds need strictly more points than this (default 1000).
    #[arg(long = "min-points", global = true, value_name = "N")]
    min_points: Option<usize>,
    /// Raster side in pixels (default 128).
    #[arg(long, global = true, value_name = "N")]
    res: Option<usize>,
    /// Matching grid spacing in meters (default 1).
    #[arg(long = "cell-size", global = true, value_name = "METERS")]
    cell_size: Option<f64>,
    /// none | up | down
    #[arg(long, global = true)]
    resample: Option<String>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate a labeled synthetic forest: clouds, manifest and census.
    Synth {
        #[arg(long)]
        out: PathBuf,
    },
    /// Pair clouds with census stems by rounded location.
    Match {
        /// Manifest CSV, or a directory containing manifest.csv.
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        census: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Render the six orthogonal projections of every cloud.
    Project {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train one model on matched labels.
    Train {
        #[arg(long)]
        manifest: PathBuf,
        /// Output directory of `match`.
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score trained runs and print the results table.
    Eval {
        /// Output directory of `train`; may repeat, one per model.
        #[arg(long = "run", required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// Every labeled cloud instead of each run's test split.
        #[arg(long)]
        all: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Class probabilities for every cloud in a manifest.
    Predict {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

fn resolve_config(g: &Globals) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::default();
    for path in &g.config {
        if !path.is_file() {
            return Err(CliError::io(format!(
                "{}: no such config file",
                path.display()
            )));
        }
        cfg.apply_file(path)?;
    }
    for pair in &g.set {
        cfg.apply_pair(pair)?;
    }
    let flags = [
        ("seed", g.seed.map(|v| v.to_string())),
        ("model", g.model.clone()),
        ("min_points", g.min_points.map(|v| v.to_string())),
        ("res", g.res.map(|v| v.to_string())),
        ("cell_size", g.cell_size.map(|v| v.to_string())),
        ("resample", g.resample.clone()),
    ];
    for (key, value) in flags {
        if let Some(v) = value {
            cfg.set(key, &v)?;
        }
    }
    Ok(cfg)
}

fn manifest_path(p: PathBuf) -> PathBuf {
    if p.is_dir() {
        commands::synth_manifest(&p)
    } else {
        p
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    let cfg = resolve_config(&cli.globals)?;
    match cli.command {
        Command::Synth { out } => commands::synth(&cfg, &out),
        Command::Match {
            manifest,
            census,
            out,
        } => commands::match_labels(&cfg, &manifest_path(manifest), &census, &out),
        Command::Project { manifest, out } => {
            commands::project(&cfg, &manifest_path(manifest), &out)
        }
        Command::Train {
            manifest,
            labels,
            out,
        } => commands::train(&cfg, &manifest_path(manifest), &labels, &out),
        Command::Eval {
            runs,
            manifest,
            labels,
            all,
            out,
        } => commands::eval(&cfg, &runs, &manifest_path(manifest), &labels, all, &out),
        Command::Predict { run, manifest, out } => {
            commands::predict(&cfg, &run, &manifest_path(manifest), &out)
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            // --help and --version
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let first = e.to_string();
            let first = first
                .lines()
                .next()
                .unwrap_or_default()
                .trim_start_matches("error: ");
            eprintln!("{}", CliError::config(first));
            return ExitCode::from(2);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{e}");
            ExitCode::FAILURE
        }
    }
}
