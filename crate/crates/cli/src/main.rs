mod commands;
mod config;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use ecgssl::signal::manifest::Split;
use ecgssl::{Error, ErrorCategory};

pub const THREADS_ENV: &str = "CORE_ECG_THREADS";

#[derive(Parser)]
#[command(name = "ecgssl", version, about = "Self-supervised pretraining and fine-tuning for multi-lead ECG")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a labelled synthetic 12-lead dataset with a manifest.
    Gen {
        #[arg(long, default_value_t = 200)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Class proportions, e.g. 1,0,0,0.
        #[arg(long, value_delimiter = ',', default_value = "0.25,0.25,0.25,0.25")]
        class_mix: Vec<f64>,
        #[arg(long, default_value_t = 500.0)]
        fs: f64,
        #[arg(long, default_value_t = 10.0)]
        duration: f64,
    },
    /// Filter, resample, crop, normalize and patchify every record of a manifest.
    Preprocess {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        /// Sampling rate assumed for CSV records.
        #[arg(long, default_value_t = 500.0)]
        csv_fs: f64,
    },
    /// Joint reconstructive and contrastive pretraining.
    Pretrain {
        #[arg(long)]
        config: PathBuf,
    },
    /// Supervised fine-tuning, optionally from a pretraining checkpoint.
    Finetune {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Print metrics of a fine-tuned checkpoint as JSON.
    Eval {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value = "test")]
        split: Split,
    },
    /// Pretrain and fine-tune over a grid of masking rates; writes one CSV row per cell.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_delimiter = ',', required = true)]
        p_time: Vec<f64>,
        #[arg(long, value_delimiter = ',', required = true)]
        p_lead: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        finetune_epochs: usize,
        #[arg(long, default_value_t = 5e-4)]
        finetune_lr: f64,
        /// Defaults to `<output_dir>/sweep.csv`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Apply frequency augmentation to a record and dump importance and noise scales.
    Augment {
        /// CECG or CSV record; a synthetic record when omitted.
        #[arg(long)]
        input: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Checkpoint holding `fda.importance`; zero weights when omitted.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = ecgssl::fda::EPSILON)]
        epsilon: f64,
        #[arg(long, default_value_t = 500.0)]
        csv_fs: f64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sample a mask plan and write visible, masked and dropped grids as CSV.
    Mask {
        #[arg(long, default_value_t = 12)]
        c: usize,
        #[arg(long, default_value_t = 30)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 0.5)]
        p_time: f64,
        #[arg(long, default_value_t = 0.2)]
        p_lead: f64,
        /// Visible leads per partial column; defaults to min(4, c).
        #[arg(long)]
        k: Option<usize>,
        /// Uniform random masking at this ratio instead of dual masking.
        #[arg(long)]
        uniform: Option<f64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Finite-difference check of every differentiable primitive.
    Gradcheck {
        #[arg(long, default_value_t = 3)]
        seeds: u64,
        #[arg(long, default_value_t = 1e-4)]
        tol: f64,
    },
}

fn configure_threads() -> Result<(), Error> {
    let Ok(value) = std::env::var(THREADS_ENV) else {
        return Ok(());
    };
    let n: usize = value
        .trim()
        .parse()
        .ok()
        .filter(|&n| n > 0)
        .ok_or_else(|| Error::Config(format!("{THREADS_ENV} = {value:?} is not a positive integer")))?;
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn run(cli: Cli) -> commands::CmdResult {
    configure_threads()?;
    use commands as c;
    match cli.command {
        Command::Gen { n, seed, out, class_mix, fs, duration } => c::gen(n, seed, &out, class_mix, fs, duration),
        Command::Preprocess { manifest, out, csv_fs } => c::preprocess(&manifest, &out, csv_fs),
        Command::Pretrain { config } => c::pretrain(&config),
        Command::Finetune { config, checkpoint } => c::finetune(&config, checkpoint.as_deref()),
        Command::Eval { config, checkpoint, split } => c::eval(&config, &checkpoint, split),
        Command::Sweep { config, p_time, p_lead, finetune_epochs, finetune_lr, out } => {
            c::sweep(&config, &p_time, &p_lead, finetune_epochs, finetune_lr, out.as_deref())
        }
        Command::Augment { input, seed, checkpoint, epsilon, csv_fs, out } => {
            c::augment(input.as_deref(), seed, checkpoint.as_deref(), epsilon, csv_fs, &out)
        }
        Command::Mask { c: leads, n, seed, p_time, p_lead, k, uniform, out } => {
            c::mask(leads, n, seed, p_time, p_lead, k, uniform, &out)
        }
        Command::Gradcheck { seeds, tol } => c::gradcheck(seeds, tol),
    }
}

fn exit_code(category: ErrorCategory) -> u8 {
    match category {
        ErrorCategory::Usage => 1,
        ErrorCategory::Data => 2,
        ErrorCategory::Numeric => 3,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 1 } else { 0 });
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            log::error!("{e}");
            ExitCode::from(exit_code(e.category()))
        }
    }
}
