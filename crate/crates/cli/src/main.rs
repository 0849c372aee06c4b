//! `hiervec`: preprocessing, training, sampling and evaluation from the shell.
//!
//! Exit codes: 0 success, 1 configuration error, 2 data error, 3 numerical
//! failure.

mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use hiervec_core::{Error, ErrorClass};

#[derive(Parser, Debug)]
#[command(name = "hiervec", version, about = "Hierarchical set-latent shape autoencoder and cascaded latent diffusion")]
pub struct Cli {
    /// Root that every relative path is resolved against.
    #[arg(long, global = true, default_value = ".")]
    pub workdir: PathBuf,

    /// Log verbosity: repeat for more.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    pub verbose: u8,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Write the eight primitive test meshes as OBJ files.
    WritePrimitives(WritePrimitivesArgs),
    /// Normalize, sample and label a directory of meshes into a shard.
    Preprocess(PreprocessArgs),
    /// Train the occupancy autoencoder on shards.
    TrainAe(TrainAeArgs),
    /// Encode the shapes of shards into a latent file.
    Encode(EncodeArgs),
    /// Decode a latent file and extract one mesh per entry.
    Reconstruct(ReconstructArgs),
    /// Train one denoiser per latent level.
    TrainDiff(TrainDiffArgs),
    /// Generate latent hierarchies with the trained cascade.
    Sample(SampleArgs),
    /// Compare reconstructed meshes with reference meshes.
    Eval(EvalArgs),
    /// Replace latent levels with noise and measure the effect on geometry.
    Analyze(AnalyzeArgs),
    /// Print attention pair and parameter counts of two model configurations.
    CostReport(CostReportArgs),
}

#[derive(Args, Debug)]
pub struct WritePrimitivesArgs {
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Args, Debug)]
pub struct PreprocessArgs {
    /// Directory of OBJ or OFF meshes.
    #[arg(long)]
    pub meshes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// JSON preprocessing config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub surface_points: Option<usize>,
    #[arg(long)]
    pub vol_points: Option<usize>,
    #[arg(long)]
    pub near_base_points: Option<usize>,
    #[arg(long)]
    pub augment: Option<bool>,
}

#[derive(Args, Debug)]
pub struct TrainAeArgs {
    #[arg(long, required = true, num_args = 1..)]
    pub shards: Vec<PathBuf>,
    /// Checkpoint path, rewritten every `checkpoint_every` steps and at the end.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    /// JSON training config; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub checkpoint_every: Option<u64>,
    /// Continue from a checkpoint of the same config and seed.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EncodeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub shards: Vec<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// Surface points fed to the encoder; defaults to the training value.
    #[arg(long)]
    pub input_points: Option<usize>,
}

#[derive(Args, Debug, Clone)]
pub struct ExtractArgs {
    /// JSON extraction config; flags override its fields.
    #[arg(long)]
    pub extract_config: Option<PathBuf>,
    #[arg(long)]
    pub resolution: Option<usize>,
    #[arg(long)]
    pub coarse_resolution: Option<usize>,
}

#[derive(Args, Debug)]
pub struct ReconstructArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long)]
    pub latents: PathBuf,
    #[arg(long)]
    pub out_dir: PathBuf,
    #[command(flatten)]
    pub extract: ExtractArgs,
}

#[derive(Args, Debug)]
pub struct TrainDiffArgs {
    #[arg(long)]
    pub latents: PathBuf,
    /// Directory receiving one checkpoint per level.
    #[arg(long)]
    pub out_dir: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<u64>,
    #[arg(long)]
    pub lr: Option<f64>,
}

#[derive(Args, Debug)]
pub struct SampleArgs {
    /// Directory written by `train-diff`.
    #[arg(long)]
    pub stages: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub seed: u64,
    #[arg(long, default_value_t = 1)]
    pub count: usize,
    /// JSON noise schedule; flags override its fields.
    #[arg(long)]
    pub schedule: Option<PathBuf>,
    #[arg(long)]
    pub steps: Option<usize>,
    /// Latent file whose levels are kept instead of sampled.
    #[arg(long)]
    pub levels_from: Option<PathBuf>,
    /// Entry of `--levels-from` to take levels from.
    #[arg(long, default_value_t = 0)]
    pub from_index: usize,
    /// Levels (1 is finest) copied from `--levels-from`; defaults to the coarsest.
    #[arg(long, value_delimiter = ',')]
    pub freeze: Vec<usize>,
    /// Condition vector, comma separated; zeros when omitted.
    #[arg(long, value_delimiter = ',')]
    pub cond: Vec<f64>,
}

#[derive(Args, Debug, Clone)]
pub struct MetricArgs {
    #[arg(long)]
    pub seed: u64,
    /// Surface samples per mesh.
    #[arg(long, default_value_t = hiervec_core::recon::DEFAULT_SAMPLES)]
    pub samples: usize,
    /// F-score distance threshold.
    #[arg(long, default_value_t = hiervec_core::recon::DEFAULT_TAU)]
    pub tau: f64,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    /// Directory of reconstructed OBJ files named after the shapes.
    #[arg(long)]
    pub pred: PathBuf,
    /// Directory of reference meshes; normalized the same way as in preprocessing.
    #[arg(long)]
    pub meshes: PathBuf,
    /// Newline-delimited JSON metric records.
    #[arg(long)]
    pub out: PathBuf,
    #[command(flatten)]
    pub metric: MetricArgs,
}

#[derive(Args, Debug)]
pub struct AnalyzeArgs {
    #[arg(long)]
    pub model: PathBuf,
    #[arg(long, required = true, num_args = 1..)]
    pub shards: Vec<PathBuf>,
    #[arg(long)]
    pub meshes: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Replacement masks, one character per level from the finest, `1` replaces.
    #[arg(long, value_delimiter = ',')]
    pub masks: Vec<String>,
    #[arg(long)]
    pub input_points: Option<usize>,
    #[command(flatten)]
    pub metric: MetricArgs,
    #[command(flatten)]
    pub extract: ExtractArgs,
}

#[derive(Args, Debug)]
pub struct CostReportArgs {
    /// JSON model config of the reference; defaults to the flat 2048-latent model.
    #[arg(long)]
    pub a: Option<PathBuf>,
    /// JSON model config compared with it; defaults to the 128/512/2048 hierarchy.
    #[arg(long)]
    pub b: Option<PathBuf>,
    #[arg(long, default_value_t = 512)]
    pub width: usize,
    #[arg(long, default_value_t = 8192)]
    pub input_points: u64,
    /// Also write the report as JSON.
    #[arg(long)]
    pub json: Option<PathBuf>,
}

fn exit_code(e: &Error) -> u8 {
    match e.class() {
        ErrorClass::Config => 1,
        ErrorClass::Data => 2,
        ErrorClass::Numerical => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).format_timestamp(None).init();
    match commands::run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
