mod data;
mod encoder_cmd;
mod images;
mod ranker_cmd;
mod util;

use std::path::PathBuf;
use std::process::ExitCode;

use chromalog::error::ErrorClass;
use clap::{Args, Parser, Subcommand};

/// Exit status when extraction skipped unreadable images.
pub const EXIT_PARTIAL: u8 = 6;

#[derive(Debug, Parser)]
#[command(name = "chromalog", version, about = "Query colour prediction and colour-aware image ranking")]
struct Cli {
    /// Base directory for relative input and output paths.
    #[arg(long, global = true, env = "CHROMALOG_DATA_DIR")]
    data_dir: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Generate or render a quantisation palette.
    #[command(subcommand)]
    Palette(data::PaletteCmd),
    /// Generate a synthetic catalog, impression logs and images.
    Synth(data::SynthArgs),
    /// Compute colour histograms for a directory of PNG images.
    Extract(data::ExtractArgs),
    /// Derive query colour labels from an impression log.
    Labels(data::LabelsArgs),
    /// Train, evaluate and query the query-to-colour encoder.
    #[command(subcommand)]
    Encoder(encoder_cmd::EncoderCmd),
    /// Train and evaluate the clicked-vs-not ranker.
    #[command(subcommand)]
    Ranker(ranker_cmd::RankerCmd),
}

/// SGD settings shared by every training command.
#[derive(Debug, Clone, Args)]
pub struct TrainArgs {
    #[arg(long, default_value_t = 0.01)]
    pub lr: f64,
    #[arg(long, default_value_t = 64)]
    pub batch_size: usize,
    #[arg(long, default_value_t = 1000)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

impl TrainArgs {
    pub fn config(&self) -> chromalog::nn::TrainConfig {
        chromalog::nn::TrainConfig {
            learning_rate: self.lr,
            batch_size: self.batch_size,
            epochs: self.epochs,
            seed: self.seed,
        }
    }
}

fn exit_code(e: &chromalog::Error) -> u8 {
    match e.class() {
        ErrorClass::Io => 3,
        ErrorClass::Format => 4,
        ErrorClass::Validation => 5,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info"))
        .format_timestamp(None)
        .init();
    let cli = Cli::parse();
    let ctx = util::Ctx::new(cli.data_dir);
    let result = match cli.command {
        Command::Palette(cmd) => data::palette(&ctx, cmd),
        Command::Synth(args) => data::synth(&ctx, args),
        Command::Extract(args) => data::extract(&ctx, args),
        Command::Labels(args) => data::labels(&ctx, args),
        Command::Encoder(cmd) => encoder_cmd::run(&ctx, cmd),
        Command::Ranker(cmd) => ranker_cmd::run(&ctx, cmd),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
