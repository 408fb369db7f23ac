//! `poolreg`: reproducible registration pipelines over the core library.
//! Exit codes: 0 success, 1 pipeline error, 2 usage error.

mod commands;
mod runconfig;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{ArgAction, Parser, Subcommand};

#[derive(Parser)]
#[command(name = "poolreg", version, about = "Decoder-only deformable image registration")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Cmd,
}

#[derive(Subcommand)]
pub enum Cmd {
    /// Generate a synthetic dataset with ground-truth deformations
    GenData(GenDataArgs),
    /// Train a registration model and write checkpoints plus a training log
    Train(TrainArgs),
    /// Warp one moving image onto one fixed image with a trained model
    Register(RegisterArgs),
    /// Score a checkpoint on a dataset split and emit the report CSV
    Eval(EvalArgs),
    /// Run a canned ablation experiment and emit its table CSVs
    Ablate(AblateArgs),
    /// Print parameter and mult-add counts for a model configuration
    Profile(ProfileArgs),
}

#[derive(clap::Args)]
pub struct GenDataArgs {
    /// Dataset directory to create
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Number of samples (single manifest.txt); exclusive with --split
    #[arg(long, conflicts_with = "split")]
    pub count: Option<usize>,
    /// train,val,test sample counts; writes train.txt/val.txt/test.txt
    #[arg(long, value_name = "TR,VA,TE")]
    pub split: Option<String>,
    #[arg(long)]
    pub seed: u64,
    /// Spatial extents, e.g. 64x64 or 32x32x32 (each divisible by 16)
    #[arg(long, default_value = "64x64")]
    pub size: String,
    /// Smoothing scale of the ground-truth displacement, in voxels
    #[arg(long)]
    pub sigma: Option<f64>,
    /// Peak displacement magnitude, in voxels
    #[arg(long)]
    pub amplitude: Option<f64>,
    /// Number of labelled structures per sample
    #[arg(long)]
    pub structures: Option<usize>,
    /// key=value file mirroring these flags; explicit flags win
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct TrainArgs {
    /// Dataset directory holding train.txt and val.txt manifests
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Output directory for best.ltc, final.ltc and train_log.csv
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    /// Width multiplier C
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    /// mse | ncc | ncc-global
    #[arg(long, default_value = "mse")]
    pub loss: String,
    /// Regularizer weight; defaults to 0.01 (mse), 5 (ncc), 2 (--diffeo)
    #[arg(long)]
    pub lambda: Option<f64>,
    #[arg(long)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    #[arg(long)]
    pub seed: u64,
    /// Predict a velocity field and exponentiate it
    #[arg(long, action = ArgAction::SetTrue)]
    pub diffeo: bool,
    /// Enabled pooling operations
    #[arg(long, value_name = "LIST", default_value = "min,avg,max")]
    pub pool_modes: String,
    /// Enabled pyramid windows (8 is mandatory)
    #[arg(long, value_name = "LIST", default_value = "2,4,8")]
    pub pool_levels: String,
    /// Concatenate the raw pair into the final block
    #[arg(long, value_name = "BOOL", default_value_t = true, action = ArgAction::Set)]
    pub use_original: bool,
    #[arg(long, default_value_t = 1)]
    pub convs_per_block: usize,
    /// key=value file mirroring these flags; explicit flags win
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct RegisterArgs {
    /// Checkpoint file written by train
    #[arg(long, value_name = "CKPT")]
    pub model: PathBuf,
    /// Moving image (single-channel .ltf)
    #[arg(long, value_name = "FILE")]
    pub moving: PathBuf,
    /// Fixed image (single-channel .ltf)
    #[arg(long, value_name = "FILE")]
    pub fixed: PathBuf,
    /// Output directory for warped/displacement/deformation .ltf files
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Exponentiate the predicted field even if the checkpoint did not
    #[arg(long, action = ArgAction::SetTrue)]
    pub diffeo: bool,
    /// key=value file mirroring these flags; explicit flags win
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct EvalArgs {
    #[arg(long, value_name = "CKPT")]
    pub model: PathBuf,
    /// Dataset directory holding <split>.txt manifests
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Manifest to score: train, val or test
    #[arg(long, default_value = "test")]
    pub split: String,
    /// Write the CSV here instead of stdout
    #[arg(long, value_name = "FILE")]
    pub out: Option<PathBuf>,
    /// key=value file mirroring these flags; explicit flags win
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct AblateArgs {
    /// freeze: encoder/decoder freezing on the baseline; pooling: pyramid ablations
    #[arg(long, value_name = "MODE")]
    pub mode: String,
    /// Dataset directory holding train/val/test manifests
    #[arg(long, value_name = "DIR")]
    pub data: PathBuf,
    /// Output directory for the table CSVs
    #[arg(long, value_name = "DIR")]
    pub out: PathBuf,
    /// Comma-separated training seeds, at least three
    #[arg(long, value_name = "LIST")]
    pub seeds: String,
    #[arg(long)]
    pub epochs: usize,
    #[arg(long, default_value_t = 1e-4)]
    pub lr: f64,
    /// Width multiplier for the pooling ablations
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    /// mse | ncc | ncc-global
    #[arg(long, default_value = "mse")]
    pub loss: String,
    /// Regularizer weight; same defaults as train
    #[arg(long)]
    pub lambda: Option<f64>,
    /// key=value file mirroring these flags; explicit flags win
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

#[derive(clap::Args)]
pub struct ProfileArgs {
    #[arg(long, default_value_t = 2)]
    pub dim: usize,
    #[arg(long, default_value_t = 8)]
    pub channels: usize,
    /// Spatial extents used for the mult-add count
    #[arg(long, default_value = "64x64")]
    pub size: String,
    #[arg(long, default_value_t = 1)]
    pub convs_per_block: usize,
    /// key=value file mirroring these flags; explicit flags win
    #[arg(long, value_name = "FILE")]
    pub config: Option<PathBuf>,
}

fn main() -> ExitCode {
    let argv: Vec<String> = std::env::args().collect();
    let argv = match runconfig::splice_config(argv) {
        Ok(v) => v,
        Err(msg) => {
            eprintln!("error: {msg}");
            return ExitCode::from(2);
        }
    };
    let cli = match Cli::try_parse_from(&argv) {
        Ok(c) => c,
        // clap prints usage/help itself and distinguishes help from misuse
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    let result = match cli.command {
        Cmd::GenData(args) => commands::gen_data(args),
        Cmd::Train(args) => commands::train(args),
        Cmd::Register(args) => commands::register(args),
        Cmd::Eval(args) => commands::eval(args),
        Cmd::Ablate(args) => commands::ablate(args),
        Cmd::Profile(args) => commands::profile(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(commands::CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(commands::CliError::Run(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
    }
}
