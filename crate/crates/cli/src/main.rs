use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod config;
mod report;

/// Train, evaluate and sample a variational auto-encoder over vector
/// graphic documents.
#[derive(Parser, Debug)]
#[command(name = "canvasvae", version)]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
pub struct Global {
    /// TOML configuration file.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Dotted override, e.g. `--set train.lambda_kl=16`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub sets: Vec<String>,
    /// Output directory; defaults to `$CANVASVAE_OUTPUT_ROOT/<command>` or
    /// `runs/<command>`.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Dataset utilities.
    Dataset {
        #[command(subcommand)]
        command: DatasetCommand,
    },
    /// Train a model on a dataset's train split.
    Train(commands::TrainArgs),
    /// Score a checkpoint (or saved documents) on a split.
    Eval(commands::EvalArgs),
    /// Sample documents from the prior.
    Generate(commands::GenerateArgs),
    /// Decode a straight line between two documents' latent codes.
    Interpolate(commands::InterpolateArgs),
    /// Render documents to SVG.
    Render(commands::RenderArgs),
    /// Train one model per KL weight and tabulate the trade-off.
    Gridsearch(commands::GridArgs),
}

#[derive(Subcommand, Debug)]
enum DatasetCommand {
    /// Generate a synthetic dataset with train/val/test splits.
    Gen(commands::GenArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let g = &cli.global;
    let result = match cli.command {
        Command::Dataset { command: DatasetCommand::Gen(a) } => commands::dataset_gen(g, a),
        Command::Train(a) => commands::train(g, a),
        Command::Eval(a) => commands::eval(g, a),
        Command::Generate(a) => commands::generate(g, a),
        Command::Interpolate(a) => commands::interpolate(g, a),
        Command::Render(a) => commands::render(g, a),
        Command::Gridsearch(a) => commands::gridsearch(g, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
        Err(commands::Failure::Runtime(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
