//! `diffmark` command-line runner.

mod commands;
mod config;
mod error;
mod manifest;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use crate::commands::{MetricsArgs, Outcome};
use crate::config::RunConfig;
use crate::error::{CliError, CliResult};
use crate::manifest::{inventory, now_ms, sha256_hex, Input, RunManifest};

/// Environment variable naming the default output root.
const OUTPUT_ROOT_ENV: &str = "DIFFMARK_OUTPUT_ROOT";
const DEFAULT_OUTPUT_ROOT: &str = "diffmark-runs";

#[derive(Debug, Parser)]
#[command(name = "diffmark", version, about = "Watermarked diffusion training, sampling and verification")]
struct Cli {
    #[command(subcommand)]
    command: Command,

    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Root seed, overriding the configuration.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory, overriding the configuration and the output root.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Train the denoiser on the watermarked forward process.
    Train,
    /// Run the reverse process from a checkpoint and export trajectories.
    Sample {
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Compare a target image against the watermark pattern.
    Verify {
        /// PNG, image container, or trajectory container (with --step).
        #[arg(long)]
        target: PathBuf,
        /// Pattern image; generated from the watermark block when omitted.
        #[arg(long)]
        pattern: Option<PathBuf>,
        /// Average the trajectory batch at this step (0 for the finals).
        #[arg(long)]
        step: Option<usize>,
    },
    /// Run the Monte-Carlo and analytic invariant suite.
    OracleCheck,
    /// Metric values from feature containers.
    Metrics {
        #[arg(long)]
        real: PathBuf,
        #[arg(long)]
        generated: PathBuf,
        #[arg(long)]
        spatial_real: Option<PathBuf>,
        #[arg(long)]
        spatial_generated: Option<PathBuf>,
        /// Classifier probabilities for the inception score.
        #[arg(long)]
        probs: Option<PathBuf>,
        #[arg(long, default_value_t = 10)]
        splits: usize,
        #[arg(long, default_value_t = diffmark::metrics::DEFAULT_KNN)]
        k: usize,
    },
    /// Grid of batch-averaged snapshots, one row per trajectory file.
    Plot {
        #[arg(long = "trajectories", required = true)]
        trajectories: Vec<PathBuf>,
        /// Steps to show, comma separated; 0 is the finals.
        #[arg(long, value_delimiter = ',')]
        steps: Option<Vec<usize>>,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train => "train",
            Command::Sample { .. } => "sample",
            Command::Verify { .. } => "verify",
            Command::OracleCheck => "oracle-check",
            Command::Metrics { .. } => "metrics",
            Command::Plot { .. } => "plot",
        }
    }
}

fn output_dir(cli: &Cli, config: &RunConfig) -> PathBuf {
    if let Some(out) = &cli.out {
        return out.clone();
    }
    if let Some(out) = &config.paths.output_dir {
        return out.clone();
    }
    let root = std::env::var_os(OUTPUT_ROOT_ENV)
        .map(PathBuf::from)
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_ROOT));
    root.join(cli.command.name())
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    let mut config = match &cli.config {
        Some(path) => RunConfig::load(path)?,
        None => RunConfig::default(),
    };
    if let Some(seed) = cli.seed {
        config.seed = seed;
    }
    config.validate()?;
    Ok(config)
}

/// Hash of everything that shapes the results; output and checkpoint locations are excluded.
fn config_hash(config: &RunConfig) -> String {
    let mut c = config.clone();
    c.paths.output_dir = None;
    c.paths.checkpoint = None;
    sha256_hex(c.canonical_json().as_bytes())
}

fn dispatch(cli: &Cli, config: &RunConfig, out: &Path) -> CliResult<Outcome> {
    match &cli.command {
        Command::Train => commands::train_cmd(config, out),
        Command::Sample { checkpoint } => {
            let path = checkpoint
                .as_ref()
                .or(config.paths.checkpoint.as_ref())
                .ok_or_else(|| CliError::Usage("sample needs --checkpoint or paths.checkpoint".into()))?;
            commands::sample_cmd(config, path, out)
        }
        Command::Verify { target, pattern, step } => {
            commands::verify_cmd(config, target, pattern.as_deref(), *step, out)
        }
        Command::OracleCheck => commands::oracle_cmd(config, out),
        Command::Metrics {
            real,
            generated,
            spatial_real,
            spatial_generated,
            probs,
            splits,
            k,
        } => commands::metrics_cmd(
            &MetricsArgs {
                real,
                generated,
                spatial_real: spatial_real.as_deref(),
                spatial_generated: spatial_generated.as_deref(),
                probs: probs.as_deref(),
                splits: *splits,
                k: *k,
            },
            out,
        ),
        Command::Plot { trajectories, steps } => {
            commands::plot_cmd(config, trajectories, steps.as_deref(), out)
        }
    }
}

fn finish(
    cli: &Cli,
    config: &RunConfig,
    out: &Path,
    started: u128,
    result: &CliResult<Outcome>,
) -> CliResult<()> {
    let (status, fingerprint, inputs) = match result {
        Ok(o) => ("ok", o.schedule_fingerprint.clone(), o.inputs.clone()),
        Err(e) => {
            let mut text = serde_json::to_string_pretty(&e.to_json()).map_err(diffmark::Error::from)?;
            text.push('\n');
            std::fs::write(out.join("error.json"), text)?;
            ("failed", None, Vec::new())
        }
    };
    let manifest = RunManifest {
        subcommand: cli.command.name().to_string(),
        status: status.to_string(),
        code_version: env!("CARGO_PKG_VERSION").to_string(),
        seed: config.seed,
        config_sha256: config_hash(config),
        schedule_fingerprint: fingerprint,
        started_unix_ms: started,
        finished_unix_ms: now_ms(),
        inputs: inputs
            .into_iter()
            .map(|(role, sha256)| Input { role, sha256 })
            .collect(),
        artifacts: inventory(out)?,
    };
    manifest.write(out)?;
    manifest.check(out)
}

fn run(cli: &Cli) -> CliResult<serde_json::Value> {
    let started = now_ms();
    let config = load_config(cli)?;
    let out = output_dir(cli, &config);
    std::fs::create_dir_all(&out)?;
    let result = dispatch(cli, &config, &out);
    finish(cli, &config, &out, started, &result)?;
    Ok(result?.summary)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(&cli) {
        Ok(summary) => {
            println!("{summary}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", e.to_json());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
