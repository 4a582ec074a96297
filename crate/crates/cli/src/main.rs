//! `amid`: phantoms, measurements, Ambient-Loss training, sampling and
//! evaluation from the command line.

mod commands;
mod config;
mod error;
mod provenance;

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use commands::Invocation;
use config::RunConfig;
use error::CliError;
use provenance::RunRecord;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "amid", version, about = "Diffusion priors learned from noisy measurements")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// TOML run configuration; defaults apply when omitted.
    #[arg(long, short)]
    config: Option<PathBuf>,
    /// Override one entry, `section.key=value`. Repeatable.
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    overrides: Vec<String>,
    /// Zero the wall-time column so reruns are byte-identical.
    #[arg(long)]
    deterministic: bool,
    /// Output directory.
    #[arg(long, short)]
    out: PathBuf,
}

#[derive(Subcommand)]
enum Command {
    /// Sample lumpy-background phantoms into a dataset.
    Phantom {
        #[command(flatten)]
        common: Common,
    },
    /// Add simulated noisy measurements to a phantom dataset.
    Measure {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
    /// Train a denoiser on measurements with the Ambient Loss.
    Train {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        /// Continue from this checkpoint up to `train.steps`.
        #[arg(long)]
        resume: Option<PathBuf>,
        /// Shorthand for `--set train.steps=N`.
        #[arg(long)]
        steps: Option<u64>,
    },
    /// Generate objects with DDIM from a trained checkpoint.
    Sample {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        /// Shorthand for `--set sampler.count=N`.
        #[arg(long)]
        count: Option<usize>,
    },
    /// One-shot estimates of the objects behind measurements.
    Recover {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
    },
    /// SSIM-PDF, high-frequency energy and Hotelling detection metrics.
    Eval {
        #[command(flatten)]
        common: Common,
        /// Dataset of generated objects.
        #[arg(long)]
        generated: PathBuf,
        /// Ground-truth dataset, disjoint from the training phantoms.
        #[arg(long)]
        truth: PathBuf,
        /// Dataset whose measurements are scored as a baseline.
        #[arg(long)]
        measured: Option<PathBuf>,
    },
    /// Train and sample once per (λ, seed) and tabulate the metrics.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        truth: PathBuf,
    },
    /// Repeat the command recorded in a `run.txt`.
    Rerun {
        run: PathBuf,
        #[arg(long, short)]
        out: PathBuf,
    },
}

fn invocation(
    name: &str,
    common: Common,
    extra: Vec<String>,
    inputs: Vec<(&str, Option<PathBuf>)>,
) -> Result<Invocation, CliError> {
    let mut overrides = common.overrides;
    overrides.extend(extra);
    let config = RunConfig::load(common.config.as_deref(), &overrides)?;
    Ok(Invocation {
        command: name.to_string(),
        config,
        inputs: inputs
            .into_iter()
            .filter_map(|(k, v)| v.map(|v| (k.to_string(), v)))
            .collect::<BTreeMap<_, _>>(),
        out: common.out,
        deterministic: common.deterministic,
    })
}

fn build(cmd: Command) -> Result<Invocation, CliError> {
    match cmd {
        Command::Phantom { common } => invocation("phantom", common, vec![], vec![]),
        Command::Measure { common, input } => invocation("measure", common, vec![], vec![("input", Some(input))]),
        Command::Train {
            common,
            data,
            resume,
            steps,
        } => invocation(
            "train",
            common,
            steps.map(|s| format!("train.steps={s}")).into_iter().collect(),
            vec![("data", Some(data)), ("resume", resume)],
        ),
        Command::Sample {
            common,
            checkpoint,
            count,
        } => invocation(
            "sample",
            common,
            count.map(|n| format!("sampler.count={n}")).into_iter().collect(),
            vec![("checkpoint", Some(checkpoint))],
        ),
        Command::Recover {
            common,
            checkpoint,
            data,
        } => invocation(
            "recover",
            common,
            vec![],
            vec![("checkpoint", Some(checkpoint)), ("data", Some(data))],
        ),
        Command::Eval {
            common,
            generated,
            truth,
            measured,
        } => invocation(
            "eval",
            common,
            vec![],
            vec![
                ("generated", Some(generated)),
                ("truth", Some(truth)),
                ("measured", measured),
            ],
        ),
        Command::Ablate { common, data, truth } => invocation(
            "ablate",
            common,
            vec![],
            vec![("data", Some(data)), ("truth", Some(truth))],
        ),
        Command::Rerun { run, out } => {
            let rec = RunRecord::read(&run)?;
            Ok(Invocation {
                command: rec.command,
                config: rec.config,
                inputs: rec.inputs,
                out,
                deterministic: rec.deterministic,
            })
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match build(cli.command).and_then(|inv| commands::run(&inv)) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", e.report());
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
