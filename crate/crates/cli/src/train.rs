use std::path::PathBuf;

use nkaec::neural::Variant;
use nkaec::training::{save_checkpoint, train_loop, write_curve, TrainConfig};
use nkaec::{Error, Result};

use crate::common::{load_config, log_config, parse_variant};

#[derive(clap::Args)]
pub struct Args {
    /// Learned components to train: g, g_A, g_t, g_t_A, g_psi_A, g_psi_t_A
    /// or A. Overrides the config's variant.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// JSON training config (model, optimizer, scenes, loss, schedule).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Output weights file; the resolved config goes to `<out>.json`.
    #[arg(long)]
    out: PathBuf,
    /// Training curve CSV. Defaults to `<out>.curve.csv`.
    #[arg(long)]
    curve: Option<PathBuf>,
    /// Directory for periodic checkpoints (when checkpoint_every > 0).
    /// Defaults to `<out>.checkpoints`.
    #[arg(long)]
    checkpoint_dir: Option<PathBuf>,
    /// Worker threads for per-example gradients. Results do not depend on it.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

pub fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    if jobs == 0 {
        return Err(Error::Config("--jobs must be >= 1".into()));
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(jobs)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))
}

fn with_suffix(path: &std::path::Path, suffix: &str) -> PathBuf {
    let mut p = path.as_os_str().to_owned();
    p.push(suffix);
    PathBuf::from(p)
}

pub fn run(args: Args, seed: Option<u64>) -> Result<()> {
    let mut cfg: TrainConfig = load_config(args.config.as_deref())?;
    if let Some(v) = args.variant {
        cfg.variant = v;
    }
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    log_config("train", &cfg)?;
    let checkpoints = args
        .checkpoint_dir
        .clone()
        .unwrap_or_else(|| with_suffix(&args.out, ".checkpoints"));
    let total = cfg.total_steps();
    let outcome = train_loop(&cfg, args.jobs, Some(&checkpoints), |row| {
        if row.step == 1 || row.step % 10 == 0 || row.step == total {
            eprintln!(
                "step {}/{total} loss {:.4} si_sdr {:.3}{}",
                row.step,
                row.loss,
                row.si_sdr,
                if row.skipped { " (skipped)" } else { "" }
            );
        }
    })?;
    save_checkpoint(&args.out, &outcome.weights, &cfg, outcome.curve.len())?;
    let curve = args
        .curve
        .unwrap_or_else(|| with_suffix(&args.out, ".curve.csv"));
    write_curve(&curve, &outcome.curve)?;
    eprintln!(
        "nkaec train: {} steps ({} skipped), weights in {}",
        outcome.curve.len(),
        outcome.skipped_steps,
        args.out.display()
    );
    Ok(())
}
