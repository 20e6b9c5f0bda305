//! `mdt`: generate synthetic multimodal datasets, train the unified
//! diagnostic transformer and its baselines, evaluate with bootstrap
//! intervals, run the ablation matrix and export attention attributions.

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Args, Parser, Subcommand};
use mdt::config::RunConfig;
use mdt::{runs, viz, UsageError};

#[derive(Parser)]
#[command(
    name = "mdt",
    about = "Multimodal diagnostic transformer: synthetic data, training, evaluation, ablations and attention maps",
    long_about = "Every run is deterministic given its resolved config file, which is written \
next to the outputs. Config precedence: defaults < --config file < --set pairs < dedicated flags. \
The MDT_THREADS environment variable caps worker threads for parallel runs. \
Exit codes: 0 success, 1 runtime failure, 2 usage error.",
    version
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

/// Flags shared by every subcommand.
#[derive(Args)]
struct Common {
    /// Flat key=value config file (see `config.resolved.txt` of any run)
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override one config key, e.g. --set dim=32 (repeatable)
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
    /// Random seed
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic multimodal dataset with a planted cross-modal signal
    GenData {
        #[command(flatten)]
        common: Common,
        /// Output dataset directory (created if missing)
        #[arg(long)]
        out: PathBuf,
        /// Number of records
        #[arg(long)]
        n: Option<usize>,
        /// Fraction of the label signal that needs both modalities
        #[arg(long)]
        fraction: Option<f64>,
        /// Pixel / lab jitter amplitude
        #[arg(long)]
        noise: Option<f64>,
    },
    /// Train a model and save its best checkpoint and training log
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory from gen-data
        #[arg(long)]
        data: PathBuf,
        /// Output run directory
        #[arg(long)]
        out: PathBuf,
        /// Model: irene | image-only | early-fusion | late-fusion
        #[arg(long)]
        model: Option<String>,
        /// Ablation row for irene: ha2|ha0|ha6|uni|no-cc|no-lab|no-token|no-image
        #[arg(long)]
        ablation: Option<String>,
        /// Training epochs
        #[arg(long)]
        epochs: Option<usize>,
        /// Mini-batch size
        #[arg(long)]
        batch_size: Option<usize>,
        /// Initial learning rate
        #[arg(long)]
        lr: Option<f32>,
    },
    /// Evaluate a trained run: per-class and macro AUROC/AUPRC with bootstrap CIs
    Eval {
        #[command(flatten)]
        common: Common,
        /// Dataset directory from gen-data
        #[arg(long)]
        data: PathBuf,
        /// Training output directory holding the checkpoint
        #[arg(long)]
        model_dir: PathBuf,
        /// Output directory for report.csv / report.json
        #[arg(long)]
        out: PathBuf,
        /// Bootstrap resamples (0 disables intervals)
        #[arg(long)]
        n_boot: Option<usize>,
        /// Split to score: train | val | test
        #[arg(long)]
        split: Option<String>,
    },
    /// Train and evaluate the full ablation matrix
    Ablate {
        #[command(flatten)]
        common: Common,
        /// Dataset directory from gen-data
        #[arg(long)]
        data: PathBuf,
        /// Output directory (one subdirectory per ablation plus ablation_table.csv)
        #[arg(long)]
        out: PathBuf,
    },
    /// Export attention attributions for one case of a trained irene run
    Viz {
        #[command(flatten)]
        common: Common,
        /// Dataset directory from gen-data
        #[arg(long)]
        data: PathBuf,
        /// Training output directory holding the checkpoint
        #[arg(long)]
        model_dir: PathBuf,
        /// Record id to explain
        #[arg(long)]
        case: String,
        /// Output directory for the CSV tables and heatmaps
        #[arg(long)]
        out: PathBuf,
        /// Cross-attention maps for this many top-ranked words
        #[arg(long)]
        top_words: Option<usize>,
    },
}

/// Defaults, then file, then --set pairs, then dedicated flags.
fn resolve(base: RunConfig, common: &Common) -> Result<RunConfig> {
    let mut cfg = base;
    if let Some(path) = &common.config {
        cfg.load_file(path)?;
    }
    for pair in &common.set {
        cfg.apply_assignment(pair)?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

fn run() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::GenData {
            common,
            out,
            n,
            fraction,
            noise,
        } => {
            let mut cfg = resolve(RunConfig::default(), &common)?;
            if let Some(n) = n {
                cfg.n_records = n;
            }
            if let Some(f) = fraction {
                cfg.cross_modal_fraction = f;
            }
            if let Some(z) = noise {
                cfg.noise = z;
            }
            runs::cmd_gen_data(&cfg, &out)
        }
        Cmd::Train {
            common,
            data,
            out,
            model,
            ablation,
            epochs,
            batch_size,
            lr,
        } => {
            let mut cfg = resolve(RunConfig::default(), &common)?;
            if let Some(m) = model {
                cfg.model = m;
            }
            if let Some(a) = ablation {
                cfg.ablation = a;
            }
            if let Some(e) = epochs {
                cfg.epochs = e;
            }
            if let Some(b) = batch_size {
                cfg.batch_size = b;
            }
            if let Some(lr) = lr {
                cfg.lr = lr;
            }
            runs::cmd_train(&cfg, &data, &out)
        }
        Cmd::Eval {
            common,
            data,
            model_dir,
            out,
            n_boot,
            split,
        } => {
            // the trained run's resolved config pins the architecture
            let base = RunConfig::from_file(&model_dir.join("config.resolved.txt"))?;
            let mut cfg = resolve(base, &common)?;
            if let Some(n) = n_boot {
                cfg.n_boot = n;
            }
            if let Some(s) = split {
                cfg.split = s;
            }
            runs::cmd_eval(&cfg, &data, &model_dir, &out)
        }
        Cmd::Ablate { common, data, out } => {
            let cfg = resolve(RunConfig::default(), &common)?;
            runs::cmd_ablate(&cfg, &data, &out)
        }
        Cmd::Viz {
            common,
            data,
            model_dir,
            case,
            out,
            top_words,
        } => {
            let base = RunConfig::from_file(&model_dir.join("config.resolved.txt"))?;
            let mut cfg = resolve(base, &common)?;
            if let Some(k) = top_words {
                cfg.top_words = k;
            }
            viz::cmd_viz(&cfg, &data, &model_dir, &case, &out).map(|_| ())
        }
    }
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some()
                || e.chain().any(|c| c.downcast_ref::<UsageError>().is_some())
            {
                ExitCode::from(2)
            } else {
                ExitCode::FAILURE
            }
        }
    }
}
