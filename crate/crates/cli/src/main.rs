mod commands;
mod config;
mod manifest;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use gotjepa::synthdata::Scenario;
use gotjepa::Error;

use crate::commands::{Ctx, Variant};
use crate::config::RunConfig;

#[derive(Parser)]
#[command(name = "gotjepa", version, about = "Train and run the tracker on synthetic video")]
struct Cli {
    /// TOML file with flat configuration keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override one configuration key, e.g. `--set seed=3`. Repeatable.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    overrides: Vec<String>,
    /// Shorthand for `--set seed=N`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render seeded synthetic sequences with annotations.
    Synth {
        #[arg(long, default_value = "standard", value_parser = parse_scenario)]
        scenario: Scenario,
        #[arg(long, default_value_t = 4)]
        count: usize,
    },
    /// Train the teacher tracker and the frozen point tracker.
    TrainStage0,
    /// Pretrain the student predictor against the frozen teacher.
    PretrainJepa,
    /// Fine-tune a predictor with the tracking loss.
    TrainHead {
        #[arg(long, value_enum)]
        variant: Variant,
    },
    /// Train the visibility adapters on top of a trained head.
    TrainOccusolver {
        #[arg(long, value_enum)]
        variant: Variant,
    },
    /// Track one stored sequence from its first-frame box.
    Track {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        sequence: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Ignore visibility adapters present in the checkpoint.
        #[arg(long)]
        plain: bool,
    },
    /// Score a prediction file, or run a checkpoint over the benchmark.
    Eval {
        #[arg(long, requires = "sequence", conflicts_with = "checkpoint")]
        predictions: Option<PathBuf>,
        #[arg(long)]
        sequence: Option<PathBuf>,
        #[arg(long, required_unless_present = "predictions")]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        plain: bool,
    },
    /// Run the ablation matrix and write a mean±std comparison table.
    Ablate {
        #[arg(long, default_value_t = 3)]
        seeds: usize,
    },
}

fn parse_scenario(s: &str) -> Result<Scenario, String> {
    serde_json::from_value(serde_json::Value::String(s.replace('-', "_")))
        .map_err(|_| format!("unknown scenario `{s}` (train, standard, occlusion_heavy)"))
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Config { .. } => 2,
        Error::Parse { .. } => 3,
        Error::UnsupportedVersion { .. } => 4,
        Error::Prerequisite(_) => 5,
        Error::Init(_) => 6,
        Error::Io { .. } => 7,
        Error::Shape(_) | Error::Domain(_) => 8,
        Error::Divergence { .. } => 9,
        Error::State(_) => 10,
    }
}

fn run(cli: Cli) -> gotjepa::Result<()> {
    let mut overrides = cli.overrides;
    if let Some(s) = cli.seed {
        overrides.push(format!("seed={s}"));
    }
    let ctx = Ctx {
        cfg: RunConfig::load(cli.config.as_deref(), &overrides)?,
    };
    match cli.command {
        Command::Synth { scenario, count } => commands::synth(&ctx, scenario, count),
        Command::TrainStage0 => commands::train_stage0(&ctx),
        Command::PretrainJepa => commands::pretrain_jepa(&ctx),
        Command::TrainHead { variant } => commands::train_head(&ctx, variant),
        Command::TrainOccusolver { variant } => commands::train_occusolver(&ctx, variant),
        Command::Track {
            checkpoint,
            sequence,
            out,
            plain,
        } => commands::track(&ctx, &checkpoint, &sequence, &out, plain),
        Command::Eval {
            predictions,
            sequence,
            checkpoint,
            plain,
        } => match (predictions, sequence, checkpoint) {
            (Some(p), Some(s), _) => commands::eval_predictions(&ctx, &p, &s),
            (_, _, Some(c)) => commands::eval_benchmark(&ctx, &c, plain),
            _ => Err(Error::config("eval", "needs --predictions with --sequence, or --checkpoint")),
        },
        Command::Ablate { seeds } => commands::ablate(&ctx, seeds),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error[{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
