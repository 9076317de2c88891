//! Command-line driver: synthetic data, training, evaluation, ablation sweeps and plots.
//!
//! Every command resolves one [`RunConfig`] (defaults, then a JSON file, then dotted
//! `--set` overrides), writes `resolved_config.json` and `manifest.json` next to its
//! artifacts, and maps failures to exit code 2 (config) or 3 (runtime).

pub mod commands;
pub mod config;
pub mod plot;

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use thiserror::Error;

use scd_core::annotations::AnnotationError;
use scd_core::eval::EvalError;
use scd_core::synthgen::SynthError;
use scd_model::ModelError;

pub use commands::{build_manifest, Artifact, Manifest, MANIFEST, RESOLVED_CONFIG};
pub use config::{resolve, RunConfig};

/// Environment variable holding the default output root.
pub const OUTPUT_ROOT_VAR: &str = "SCD_OUTPUT_ROOT";

#[derive(Debug, Error)]
pub enum CliError {
    #[error("invalid config: {0}")]
    Config(String),
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
    #[error("{}: {message}", path.display())]
    Image { path: PathBuf, message: String },
    #[error("plot: {0}")]
    Plot(String),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Synth(#[from] SynthError),
    #[error(transparent)]
    Annotation(#[from] AnnotationError),
    #[error(transparent)]
    Eval(#[from] EvalError),
}

impl CliError {
    pub fn is_config(&self) -> bool {
        matches!(self, CliError::Config(_) | CliError::Model(ModelError::Config(_)) | CliError::Synth(SynthError::Config(_)))
    }

    pub fn exit_code(&self) -> u8 {
        if self.is_config() {
            2
        } else {
            3
        }
    }

    /// One-line JSON for stderr: `{"error": "config"|"runtime", "exit_code": n, "message": ...}`.
    pub fn to_json(&self) -> String {
        serde_json::json!({
            "error": if self.is_config() { "config" } else { "runtime" },
            "exit_code": self.exit_code(),
            "message": self.to_string(),
        })
        .to_string()
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "scd",
    version,
    about = "Synthetic stacked-carton detection: datasets, training, evaluation and ablation sweeps",
    after_help = "Artifacts go to `output_dir`, else $SCD_OUTPUT_ROOT/<command>, else runs/<command>.\n\
                  Every run writes resolved_config.json and manifest.json (seed and SHA-256 of each artifact).\n\
                  Print every config key with its default: `scd show-config`.\n\n\
                  Exit codes: 0 success, 2 config error, 3 runtime error. Errors are printed to stderr as one JSON line."
)]
pub struct Cli {
    /// JSON run config. Keys left out keep their defaults; unknown keys are rejected.
    #[arg(short, long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,
    /// Dotted-path override applied after the config file, e.g. `train.iterations=500`.
    /// The value is parsed as JSON and falls back to a plain string. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Shorthand for `--set output_dir=DIR`.
    #[arg(short, long, global = true, value_name = "DIR")]
    pub output_dir: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Render a synthetic dataset: images/*.png, annotations.json (COCO) and split.json.
    GenData,
    /// Dataset statistics as statistics.json.
    Stats,
    /// Train on the train split, then score the eval subset.
    Train,
    /// Score `eval.detections` or the predictions of `eval.checkpoint`.
    Eval,
    /// One AP table per `sweep.alphas` value from a single model, plus summary.csv.
    SweepAlpha,
    /// Train one model per `sweep.thicknesses` value, plus summary.csv.
    SweepThickness,
    /// Train one model per `sweep.bgs_losses` variant, plus summary.csv.
    SweepBgsLoss,
    /// Write the dataset in `data.export_format`.
    Export,
    /// Render SVG plots and their CSV data from sweep summary files.
    Plot {
        /// summary.csv files written by the sweep commands.
        #[arg(required = true)]
        summaries: Vec<PathBuf>,
    },
    /// Print the resolved config (all defaults included) and exit.
    ShowConfig,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::GenData => "gen-data",
            Command::Stats => "stats",
            Command::Train => "train",
            Command::Eval => "eval",
            Command::SweepAlpha => "sweep-alpha",
            Command::SweepThickness => "sweep-thickness",
            Command::SweepBgsLoss => "sweep-bgs-loss",
            Command::Export => "export",
            Command::Plot { .. } => "plot",
            Command::ShowConfig => "show-config",
        }
    }
}

fn output_dir(cfg: &RunConfig, command: &Command) -> PathBuf {
    if let Some(dir) = &cfg.output_dir {
        return dir.clone();
    }
    let root = std::env::var_os(OUTPUT_ROOT_VAR).map(PathBuf::from).unwrap_or_else(|| PathBuf::from("runs"));
    root.join(command.name())
}

/// Runs one command and returns its output directory (`None` for `show-config`).
pub fn run(command: &Command, config: Option<&Path>, overrides: &[String]) -> Result<Option<PathBuf>, CliError> {
    let cfg = resolve(config, overrides)?;
    if let Command::ShowConfig = command {
        println!("{}", cfg.snapshot());
        return Ok(None);
    }
    let out = output_dir(&cfg, command);
    std::fs::create_dir_all(&out).map_err(|source| CliError::Io { path: out.clone(), source })?;
    let snapshot = out.join(RESOLVED_CONFIG);
    std::fs::write(&snapshot, cfg.snapshot()).map_err(|source| CliError::Io { path: snapshot.clone(), source })?;

    let mut written = match command {
        Command::GenData => commands::gen_data(&cfg, &out)?,
        Command::Stats => commands::stats(&cfg, &out)?,
        Command::Train => commands::train(&cfg, &out)?,
        Command::Eval => commands::eval(&cfg, &out)?,
        Command::SweepAlpha => commands::sweep_alpha(&cfg, &out)?,
        Command::SweepThickness => commands::sweep_thickness(&cfg, &out)?,
        Command::SweepBgsLoss => commands::sweep_bgs_loss(&cfg, &out)?,
        Command::Export => commands::export(&cfg, &out)?,
        Command::Plot { summaries } => commands::plot(summaries, &out)?,
        Command::ShowConfig => unreachable!("handled above"),
    };
    written.push(snapshot);
    let manifest = build_manifest(command.name(), cfg.seed, &out, &written)?;
    let path = out.join(MANIFEST);
    let text = serde_json::to_string_pretty(&manifest).expect("manifest always serializes");
    std::fs::write(&path, text).map_err(|source| CliError::Io { path: path.clone(), source })?;
    Ok(Some(out))
}

impl Cli {
    /// Overrides with `--output-dir` appended last.
    pub fn all_overrides(&self) -> Vec<String> {
        let mut all = self.overrides.clone();
        if let Some(dir) = &self.output_dir {
            all.push(format!("output_dir={}", serde_json::json!(dir.to_string_lossy())));
        }
        all
    }
}
