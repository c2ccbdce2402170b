use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

mod commands;
mod fail;
mod fetch;
mod overrides;
mod rundir;

#[derive(Parser, Debug)]
#[command(name = "resmix", version, about = "Residual mixture networks: datasets, training and verification")]
struct Cli {
    /// Root under which timestamped run directories are created.
    #[arg(long, global = true, env = "RESMIX_OUT_ROOT", default_value = "runs")]
    out_root: PathBuf,
    /// Worker threads for generation, evaluation and sweep cells.
    #[arg(long, global = true)]
    threads: Option<usize>,
    /// Repeat for more log output.
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

/// Configuration layering shared by `train` and `sweep`.
#[derive(Args, Debug, Clone)]
pub struct ConfigArgs {
    /// JSON config merged over the defaults (or over the preset).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Named learning-rate preset, e.g. table3-resmix41-pentomino.
    #[arg(long)]
    preset: Option<String>,
    /// Dot-path override, e.g. --set learning_rate=0.01 (repeatable).
    #[arg(long = "set", value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Directory holding train.rmxd / val.rmxd / test.rmxd; fills data paths.
    #[arg(long)]
    data_dir: Option<PathBuf>,
    /// MNIST IDX directory used to audit MNIST Parity provenance.
    #[arg(long, env = "RESMIX_MNIST_DIR", default_value = "data/mnist")]
    mnist_dir: PathBuf,
    /// Explicit run directory (must be absent or empty).
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Download files and verify their SHA-256.
    Fetch {
        /// Source URL (http, https or file); pair each with --sha256.
        #[arg(long = "url")]
        urls: Vec<String>,
        #[arg(long = "sha256")]
        hashes: Vec<String>,
        /// JSON list of {url, sha256, name?} entries.
        #[arg(long)]
        manifest: Option<PathBuf>,
        #[arg(long, default_value = "data/mnist")]
        dest: PathBuf,
    },
    /// Generate dataset splits and audit them.
    Gen {
        #[arg(long, value_parser = ["mnist-parity", "pentomino"])]
        dataset: String,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        sets: Vec<String>,
        /// Master seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Sample count for every generated split.
        #[arg(long)]
        count: Option<usize>,
        /// Comma-separated subset of train,val,test.
        #[arg(long, value_delimiter = ',', default_value = "train,val,test")]
        splits: Vec<String>,
        #[arg(long, env = "RESMIX_MNIST_DIR", default_value = "data/mnist")]
        mnist_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train one model.
    Train {
        #[command(flatten)]
        cfg: ConfigArgs,
        /// Continue from a checkpoint (its stored configuration is used).
        #[arg(long, conflicts_with_all = ["config", "preset", "sets", "data_dir"])]
        resume: Option<PathBuf>,
    },
    /// Evaluate a checkpoint on a dataset file.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Use the last-epoch weights instead of the best-validation ones.
        #[arg(long)]
        last: bool,
        #[arg(long, default_value_t = 128)]
        batch_size: usize,
        #[arg(long)]
        allow_unaudited: bool,
        #[arg(long, env = "RESMIX_MNIST_DIR", default_value = "data/mnist")]
        mnist_dir: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Train a learning-rate × seed grid and summarize test error.
    Sweep {
        #[command(flatten)]
        cfg: ConfigArgs,
        #[arg(long, value_delimiter = ',')]
        lrs: Option<Vec<f64>>,
        #[arg(long, value_delimiter = ',')]
        seeds: Option<Vec<u64>>,
    },
    /// Print parameter counts with a per-module breakdown.
    Params {
        #[arg(long, value_parser = ["resmixnet", "resnet"])]
        model: Option<String>,
        #[arg(long)]
        experts: Option<usize>,
        /// Blocks per stack for ResMixNet; total depth (26, 50, ...) for ResNet.
        #[arg(long)]
        depth: Option<usize>,
        #[arg(long, conflicts_with_all = ["model", "experts", "depth"])]
        preset: Option<String>,
        #[arg(long)]
        json: bool,
    },
    /// Finite-difference gradient checks and the convolution oracle.
    Gradcheck {
        /// Also check a full ResMixNet(2,1) in f64.
        #[arg(long)]
        full: bool,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Write dataset samples as PNG files with an index.csv.
    ExportPng {
        #[arg(long)]
        data: PathBuf,
        /// First N samples.
        #[arg(long, conflicts_with = "indices")]
        count: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        indices: Option<Vec<usize>>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Convert a metrics CSV to per-epoch loss/error curves.
    ExportCurves {
        #[arg(long)]
        metrics: PathBuf,
        /// Output CSV; stdout when absent.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
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
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(3);
        }
    }
    match commands::run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {:#}", f.error());
            ExitCode::from(f.code())
        }
    }
}
