use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use kvae_harness::commands::{self, MODEL_FILE};
use kvae_harness::{ExperimentConfig, HarnessError, Result};

/// Kalman variational auto-encoder experiments.
///
/// Set KVAE_THREADS to cap the worker threads.
#[derive(Parser)]
#[command(name = "kvae", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// key = value config file; defaults apply to missing keys.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Overrides the config's seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Named presets applied before the config file (comma list).
    #[arg(long)]
    preset: Option<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Simulate training and test videos.
    GenData {
        #[command(flatten)]
        common: Common,
    },
    /// Train a model on <data>/train.kvd.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory; defaults to data.dir or --out.
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Score filter, smooth and generate imputation on the test set.
    EvalImpute {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Defaults to <out>/model.ckpt.
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Sample videos from a trained model.
    Generate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Video length; defaults to the world's episode length.
        #[arg(long)]
        steps: Option<usize>,
        /// Test-episode frames to condition on.
        #[arg(long, default_value_t = 0)]
        prefix: usize,
    },
    /// Write latent trajectories, frame stacks and α heatmaps.
    ExportLatents {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        /// Test episode ids, comma separated; defaults to export.episodes.
        #[arg(long, value_delimiter = ',')]
        episodes: Option<Vec<usize>>,
    },
}

fn config(common: &Common, fallback: Option<ExperimentConfig>) -> Result<ExperimentConfig> {
    let mut text = String::new();
    if let Some(p) = &common.preset {
        text.push_str(&format!("preset = {p}\n"));
    }
    if let Some(path) = &common.config {
        text.push_str(&std::fs::read_to_string(path).map_err(|source| HarnessError::Io { path: path.clone(), source })?);
    }
    let mut cfg = match fallback {
        Some(cfg) if text.is_empty() => cfg,
        _ => ExperimentConfig::parse(&text)?,
    };
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    Ok(cfg)
}

/// The config stored in the checkpoint is used unless one is given.
fn with_checkpoint(
    common: &Common,
    checkpoint: &Option<PathBuf>,
) -> Result<(ExperimentConfig, kvae_core::kvae::KvaeModel)> {
    let path = checkpoint.clone().unwrap_or_else(|| common.out.join(MODEL_FILE));
    let (stored, model, _) = commands::load_checkpoint(&path)?;
    let cfg = config(common, Some(stored))?;
    if cfg.model != model.config {
        return Err(HarnessError::Config(format!("{} was trained with a different model config", path.display())));
    }
    Ok((cfg, model))
}

fn data_dir(cfg: &ExperimentConfig, data: &Option<PathBuf>, out: &Path) -> PathBuf {
    data.clone().unwrap_or_else(|| cfg.data_path(out))
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData { common } => {
            let cfg = config(&common, None)?;
            commands::gen_data(&cfg, &common.out)?;
        }
        Command::Train { common, data, resume } => {
            let cfg = config(&common, None)?;
            let dir = data_dir(&cfg, &data, &common.out);
            let out = commands::train(&cfg, &dir, &common.out, resume.as_deref())?;
            println!("trained to epoch {}; checkpoint {}", out.state.epoch, out.checkpoint.display());
        }
        Command::EvalImpute { common, data, checkpoint } => {
            let (cfg, model) = with_checkpoint(&common, &checkpoint)?;
            let dir = data_dir(&cfg, &data, &common.out);
            for r in commands::eval_impute(&cfg, &model, &dir, &common.out)? {
                let (kind, param) = r.pattern.label();
                println!("{kind:>6} {param:>4} {:>8} {:.5} ± {:.5} (n={})", r.mode, r.mean, r.std, r.n);
            }
        }
        Command::Generate { common, data, checkpoint, count, steps, prefix } => {
            let (cfg, model) = with_checkpoint(&common, &checkpoint)?;
            let dir = data_dir(&cfg, &data, &common.out);
            let steps = steps.unwrap_or(cfg.world.steps);
            let files = commands::generate_videos(&cfg, &model, Some(&dir), count, steps, prefix, &common.out)?;
            println!("wrote {} files to {}", files.len(), common.out.display());
        }
        Command::ExportLatents { common, data, checkpoint, episodes } => {
            let (cfg, model) = with_checkpoint(&common, &checkpoint)?;
            let dir = data_dir(&cfg, &data, &common.out);
            let episodes = episodes.unwrap_or_else(|| cfg.export.episodes.clone());
            let out = commands::export_latents(&cfg, &model, &dir, &episodes, &common.out)?;
            println!("wrote {} files to {}", out.files.len(), common.out.display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(n) = std::env::var("KVAE_THREADS").ok().and_then(|v| v.parse::<usize>().ok()) {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            log::warn!("could not cap threads: {e}");
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
