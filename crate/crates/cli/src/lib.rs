//! Command-line front end: configuration, stage commands and artifact layout.

pub mod commands;
pub mod config;

use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use serde_json::json;

pub use commands::{CliError, Outcome};
pub use config::PipelineConfig;

#[derive(Debug, Parser)]
#[command(
    name = "brqual",
    version,
    about = "Detect and improve low-quality bug reports"
)]
pub struct Cli {
    #[command(flatten)]
    pub global: GlobalArgs,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Args)]
pub struct GlobalArgs {
    /// Pipeline configuration file.
    #[arg(long, global = true, env = config::CONFIG_ENV)]
    pub config: Option<PathBuf>,
    /// Print the summary line, and errors on stderr, as JSON.
    #[arg(long, global = true)]
    pub json: bool,
    /// Seed for sampling and training.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Print the plan without calling providers or writing files.
    #[arg(long, global = true)]
    pub dry_run: bool,
    /// Override a config value, e.g. `--set rag.keep=10`. Repeatable.
    #[arg(long = "set", global = true, value_name = "SECTION.KEY=VALUE")]
    pub overrides: Vec<String>,
}

#[derive(Debug, Clone, Copy, Default, Args)]
pub struct AblationArgs {
    /// Leave out retrieved knowledge.
    #[arg(long)]
    pub no_rag: bool,
    /// Leave out detector findings and improve every required section.
    #[arg(long)]
    pub no_detector: bool,
    /// Leave out the few-shot examples.
    #[arg(long)]
    pub no_fewshot: bool,
}

#[derive(Debug, Clone, Subcommand)]
pub enum Command {
    /// Download reports from the tracker into raw.jsonl.
    Fetch,
    /// Draw the stratified evaluation sample.
    Sample,
    /// Clean reports and split them into template sections.
    Preprocess,
    /// Score, check and analyze report quality.
    Detect,
    /// Rewrite deficient sections.
    Improve(AblationArgs),
    /// Completeness, similarity and agreement studies.
    Evaluate,
    /// Run improve once per ablation variant and compare.
    Ablate,
    /// Fit the quality classifier from labeled reports.
    TrainDetector,
    /// Chunk, embed and index knowledge documents.
    BuildKb,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Fetch => "fetch",
            Command::Sample => "sample",
            Command::Preprocess => "preprocess",
            Command::Detect => "detect",
            Command::Improve(_) => "improve",
            Command::Evaluate => "evaluate",
            Command::Ablate => "ablate",
            Command::TrainDetector => "train-detector",
            Command::BuildKb => "build-kb",
        }
    }
}

fn flag_overrides(global: &GlobalArgs) -> Result<Vec<(String, String)>, CliError> {
    let mut out = Vec::new();
    for o in &global.overrides {
        let (k, v) = o.split_once('=').ok_or_else(|| {
            CliError::Config(format!("--set {o:?} must look like section.key=value"))
        })?;
        out.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(seed) = global.seed {
        out.push(("sample.seed".into(), seed.to_string()));
    }
    Ok(out)
}

/// Load configuration from the process environment and run one command.
pub fn execute(cli: &Cli) -> Result<Outcome, CliError> {
    let flags = flag_overrides(&cli.global)?;
    let config = PipelineConfig::load(cli.global.config.as_deref(), &flags, std::env::vars())
        .map_err(|e| CliError::Config(e.to_string()))?;
    commands::run(&cli.command, &config, cli.global.dry_run)
}

/// Run, print the summary or error, and return the process exit code.
pub fn main_with(cli: Cli) -> i32 {
    let start = Instant::now();
    let name = cli.command.name();
    match execute(&cli) {
        Ok(outcome) => {
            let elapsed = start.elapsed().as_secs_f64();
            if cli.global.json {
                let mut v = json!({ "command": name, "ok": true, "elapsed_secs": elapsed, "dry_run": cli.global.dry_run });
                v["counts"] = json!(outcome.counts);
                if !outcome.notes.is_empty() {
                    v["notes"] = json!(outcome.notes);
                }
                println!("{v}");
            } else {
                for line in &outcome.text {
                    println!("{line}");
                }
                for n in &outcome.notes {
                    eprintln!("note: {n}");
                }
                let counts: Vec<String> = outcome
                    .counts
                    .iter()
                    .map(|(k, v)| format!("{k}={v}"))
                    .collect();
                let mode = if cli.global.dry_run { " (dry run)" } else { "" };
                println!("{name}{mode}: {} in {elapsed:.2}s", counts.join(" "));
            }
            0
        }
        Err(e) => {
            if cli.global.json {
                eprintln!(
                    "{}",
                    json!({ "command": name, "ok": false, "exit_code": e.exit_code(), "kind": e.kind(), "error": e.to_string() })
                );
            } else {
                eprintln!("brqual {name}: {e}");
            }
            e.exit_code()
        }
    }
}
