//! `rednet` command-line tool.

mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

#[derive(Parser, Debug)]
#[command(name = "rednet", version, about = "Recursive encoder-decoder edge detection")]
struct Cli {
    /// Seed for every random choice of the run.
    #[arg(long, global = true, default_value_t = 0)]
    seed: u64,
    /// Worker threads for evaluation and batch inference.
    #[arg(long, global = true, default_value_t = 1)]
    threads: usize,
    /// Output directory.
    #[arg(long, global = true, default_value = "rednet-out")]
    out: PathBuf,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Generate a synthetic dataset and its manifest.
    GenData(GenDataArgs),
    /// Train a model on a manifest.
    Train(TrainArgs),
    /// Write edge maps for images.
    Infer(InferArgs),
    /// Benchmark a checkpoint or precomputed edge maps against a manifest.
    Eval(EvalArgs),
    /// Merge PR-curve CSVs into one labeled long-form table.
    PlotData(PlotDataArgs),
}

#[derive(Args, Debug)]
pub struct GenDataArgs {
    /// Number of images.
    #[arg(long, default_value_t = 4)]
    pub n: usize,
    /// Side length in pixels.
    #[arg(long, default_value_t = 64)]
    pub size: usize,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    /// Training manifest.
    #[arg(long)]
    pub manifest: PathBuf,
    /// Named preset the config file and overrides apply on top of.
    #[arg(long, default_value = "desk")]
    pub preset: String,
    /// `key=value` config file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Extra `key=value` overrides, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    /// Learning rate override.
    #[arg(long)]
    pub lr: Option<f64>,
    /// Continue from a checkpoint written by an earlier run with the same config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct InferArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Recursion depth; defaults to the checkpoint's.
    #[arg(long)]
    pub depth: Option<usize>,
    /// Also write raw float `.edge` files.
    #[arg(long)]
    pub raw: bool,
    /// Input images.
    #[arg(required = true)]
    pub images: Vec<PathBuf>,
}

#[derive(Args, Debug)]
pub struct EvalArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Checkpoint to run over the manifest images.
    #[arg(long, conflicts_with = "pred_dir", required_unless_present = "pred_dir")]
    pub checkpoint: Option<PathBuf>,
    /// Directory of precomputed edge maps named `<stem>.png`, `<stem>.edge`,
    /// `<stem>_final.png`, or `<stem>_final.edge`.
    #[arg(long)]
    pub pred_dir: Option<PathBuf>,
    /// Matching tolerance as a fraction of the image diagonal; defaults to the manifest's.
    #[arg(long)]
    pub max_dist: Option<f64>,
    /// Recursion depth; defaults to the checkpoint's.
    #[arg(long)]
    pub depth: Option<usize>,
}

#[derive(Args, Debug)]
pub struct PlotDataArgs {
    /// Labels for the inputs, in order; defaults to each file's parent directory name.
    #[arg(long = "label")]
    pub labels: Vec<String>,
    /// `pr_curve.csv` files written by `eval`.
    pub curves: Vec<PathBuf>,
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().filter_or("REDNET_LOG", "warn")).init();
    let cli = Cli::parse();
    let global = commands::Global { seed: cli.seed, out: cli.out, threads: cli.threads };
    let result = commands::init_threads(global.threads).and_then(|()| match cli.command {
        Command::GenData(a) => commands::gen_data(&global, &a),
        Command::Train(a) => commands::train(&global, &a),
        Command::Infer(a) => commands::infer(&global, &a),
        Command::Eval(a) => commands::eval(&global, &a),
        Command::PlotData(a) => commands::plot_data(&global, &a),
    });
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
