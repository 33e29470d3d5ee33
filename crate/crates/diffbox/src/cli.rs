//! Command-line definitions.

use std::path::PathBuf;
use std::time::Duration;

use clap::{Args, Parser, Subcommand};

use crate::commands::{cmd_ablate, cmd_eval, cmd_generate_data, cmd_train, AblateOptions, CommandError, EvalOptions, TrainOptions};
use crate::config::{ConfigFlags, RunConfig};

#[derive(Debug, Parser)]
#[command(name = "diffbox", version, about = "Object detection as denoising diffusion over boxes, on a synthetic benchmark")]
pub struct Cli {
    /// More log output (repeatable).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    pub verbose: u8,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a synthetic dataset.
    GenerateData(GenerateArgs),
    /// Train a decoder on a dataset.
    Train(TrainArgs),
    /// Evaluate a checkpoint (or the oracle) on a dataset.
    Eval(EvalArgs),
    /// Run ablation tables from one or more checkpoints.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[command(flatten)]
    pub flags: ConfigFlags,
    /// Output dataset file.
    #[arg(long, short)]
    pub output: PathBuf,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    #[command(flatten)]
    pub flags: ConfigFlags,
    /// Training log (JSON Lines).
    #[arg(long)]
    pub log: Option<PathBuf>,
    /// Continue training from this checkpoint.
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Stop after the epoch that crosses this many seconds.
    #[arg(long)]
    pub time_limit_secs: Option<u64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[command(flatten)]
    pub flags: ConfigFlags,
    /// Evaluate the ground-truth oracle instead of a checkpoint.
    #[arg(long)]
    pub oracle: bool,
    /// EvalResult JSON (default: stdout).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Per-image detections (JSON Lines).
    #[arg(long)]
    pub detections: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[command(flatten)]
    pub flags: ConfigFlags,
    /// Comma-separated: sampling, dynamic, signal-scale, padding, box-count.
    #[arg(long, value_delimiter = ',', default_value = "sampling")]
    pub axes: Vec<String>,
    /// More checkpoints to draw sweep rows from.
    #[arg(long = "extra-checkpoint")]
    pub extra_checkpoints: Vec<PathBuf>,
    #[arg(long, value_delimiter = ',', default_value = "0.1,1.0,2.0,3.0")]
    pub scale_rows: Vec<f64>,
    #[arg(long, value_delimiter = ',', default_value = "repeat,cat-gaussian,cat-uniform,cat-full")]
    pub padding_rows: Vec<String>,
    /// Default: the n_train of every supplied checkpoint.
    #[arg(long, value_delimiter = ',')]
    pub n_train_rows: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "16,64,256")]
    pub n_eval_list: Vec<usize>,
    #[arg(long, value_delimiter = ',', default_value = "1,2,3")]
    pub steps_list: Vec<usize>,
    /// Tables as JSON (default: stdout).
    #[arg(long, short)]
    pub output: Option<PathBuf>,
    /// Tables as aligned text (default: stderr).
    #[arg(long)]
    pub text: Option<PathBuf>,
}

fn resolve(flags: &ConfigFlags) -> Result<RunConfig, CommandError> {
    RunConfig::resolve(flags).map_err(|e| CommandError::Usage(e.to_string()))
}

pub fn run(cli: Cli) -> Result<(), CommandError> {
    match cli.command {
        Command::GenerateData(a) => {
            let cfg = resolve(&a.flags)?;
            cmd_generate_data(&cfg, &a.output)?;
        }
        Command::Train(a) => {
            let cfg = resolve(&a.flags)?;
            let opts = TrainOptions { log: a.log, resume: a.resume, time_limit: a.time_limit_secs.map(Duration::from_secs) };
            cmd_train(&cfg, &opts)?;
        }
        Command::Eval(a) => {
            let cfg = resolve(&a.flags)?;
            cmd_eval(&cfg, &EvalOptions { oracle: a.oracle, output: a.output, detections: a.detections })?;
        }
        Command::Ablate(a) => {
            let cfg = resolve(&a.flags)?;
            let opts = AblateOptions {
                axes: a.axes,
                extra_checkpoints: a.extra_checkpoints,
                scale_rows: a.scale_rows,
                padding_rows: a.padding_rows,
                n_train_rows: a.n_train_rows,
                n_eval_list: a.n_eval_list,
                steps_list: a.steps_list,
                output: a.output,
                text: a.text,
            };
            cmd_ablate(&cfg, &opts)?;
        }
    }
    Ok(())
}
