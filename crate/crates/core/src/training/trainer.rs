//! Data-parallel training with ordered gradient reduction.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::example::{example_loss, TrainingExample};
use super::optim::{clip_global_norm, Adam, AdamConfig};
use super::LossConfig;
use crate::autodiff::{Backend, Eval, Tape};
use crate::error::{Error, Result};
use crate::metrics::write_file;
use crate::neural::{HookSet, ModelConfig, ModelWeights, NeuralKalman, Params, Variant};
use crate::scene::RandomSceneConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub variant: Variant,
    pub model: ModelConfig,
    pub epochs: usize,
    pub batch_size: usize,
    /// Number of distinct training scenes drawn from `scenes`.
    pub train_scenes: usize,
    /// Stops early once this many optimizer steps were taken.
    pub max_steps: Option<usize>,
    pub seed: u64,
    pub optimizer: AdamConfig,
    pub grad_clip_norm: f64,
    /// Checkpoint period in steps; 0 disables checkpoints.
    pub checkpoint_every: usize,
    pub scenes: RandomSceneConfig,
    pub loss: LossConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            variant: Variant::GTA,
            model: ModelConfig::desk(),
            epochs: 1,
            batch_size: 4,
            train_scenes: 64,
            max_steps: None,
            seed: 0,
            optimizer: AdamConfig::default(),
            grad_clip_norm: 5.0,
            checkpoint_every: 0,
            scenes: RandomSceneConfig::default(),
            loss: LossConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.model.validate()?;
        self.optimizer.validate()?;
        self.loss.validate()?;
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if self.train_scenes == 0 {
            return Err(Error::Config("train_scenes must be >= 1".into()));
        }
        if !(self.grad_clip_norm > 0.0) {
            return Err(Error::Config("grad_clip_norm must be > 0".into()));
        }
        Ok(())
    }

    /// Optimizer steps per epoch.
    pub fn steps_per_epoch(&self) -> usize {
        self.train_scenes.div_ceil(self.batch_size)
    }

    pub fn total_steps(&self) -> usize {
        let n = self.epochs * self.steps_per_epoch();
        self.max_steps.map_or(n, |m| m.min(n))
    }
}

/// Seed of the `i`-th scene of a set drawn with `seed`.
pub fn scene_seed(seed: u64, i: usize) -> u64 {
    seed.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        .wrapping_add(i as u64 + 1)
}

/// Renders `count` scenes starting at index `offset` of the seed stream.
pub fn build_examples(
    model: &ModelConfig,
    scenes: &RandomSceneConfig,
    seed: u64,
    offset: usize,
    count: usize,
) -> Result<Vec<TrainingExample>> {
    (offset..offset + count)
        .into_par_iter()
        .map(|i| TrainingExample::from_spec(model, &scenes.sample(scene_seed(seed, i))?))
        .collect()
}

/// One row of the training curve.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TraceRow {
    pub step: usize,
    pub loss: f64,
    pub si_sdr: f64,
    pub wall_ms: u64,
    /// The update was skipped because the loss or a gradient was not finite.
    pub skipped: bool,
}

pub const CURVE_HEADER: &str = "step,loss,si_sdr,wall_ms";

pub fn curve_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from(CURVE_HEADER);
    s.push('\n');
    for r in rows {
        s.push_str(&format!(
            "{},{},{},{}\n",
            r.step, r.loss, r.si_sdr, r.wall_ms
        ));
    }
    s
}

pub fn write_curve(path: &Path, rows: &[TraceRow]) -> Result<()> {
    write_file(path, curve_csv(rows).as_bytes())
}

struct ExampleGrad {
    loss: f64,
    si_sdr: f64,
    grads: Vec<Vec<f64>>,
}

/// Loss and gradients of one example on a private tape. `None` when the
/// forward pass diverged.
fn example_gradients(
    model: &ModelConfig,
    hooks: HookSet,
    weights: &ModelWeights,
    example: &TrainingExample,
    loss: &LossConfig,
) -> Result<Option<ExampleGrad>> {
    let nk = NeuralKalman::for_model(*model, hooks)?;
    let mut tape = Tape::new();
    let params = Params::new(&mut tape, weights);
    let fwd = match example_loss(&mut tape, &nk, &params, example, loss) {
        Ok(f) => f,
        Err(e) if e.is_divergence() => return Ok(None),
        Err(e) => return Err(e),
    };
    let value = tape.scalar(&fwd.loss);
    if !value.is_finite() {
        return Ok(None);
    }
    let g = tape.backward(fwd.loss)?;
    let grads: Vec<Vec<f64>> = params.values().iter().map(|v| g.get(*v)).collect();
    if grads.iter().flatten().any(|v| !v.is_finite()) {
        return Ok(None);
    }
    Ok(Some(ExampleGrad {
        loss: value,
        si_sdr: fwd.si_sdr,
        grads,
    }))
}

/// Optimizer state around a set of weights.
pub struct Trainer {
    cfg: TrainConfig,
    hooks: HookSet,
    weights: ModelWeights,
    adam: Adam,
    step: usize,
    pool: rayon::ThreadPool,
}

impl Trainer {
    /// `jobs` worker threads; results do not depend on it.
    pub fn new(cfg: TrainConfig, weights: ModelWeights, jobs: usize) -> Result<Self> {
        cfg.validate()?;
        weights.validate(&cfg.model)?;
        let sizes: Vec<usize> = weights.iter().map(|(_, t)| t.data.len()).collect();
        let pool = rayon::ThreadPoolBuilder::new()
            .num_threads(jobs.max(1))
            .build()
            .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
        Ok(Self {
            hooks: cfg.variant.hooks(),
            adam: Adam::new(cfg.optimizer, &sizes)?,
            cfg,
            weights,
            step: 0,
            pool,
        })
    }

    pub fn weights(&self) -> &ModelWeights {
        &self.weights
    }

    pub fn into_weights(self) -> ModelWeights {
        self.weights
    }

    pub fn steps_taken(&self) -> usize {
        self.step
    }

    /// Mean loss over `batch`, global clipping, one optimizer step.
    pub fn train_step(&mut self, batch: &[&TrainingExample]) -> Result<TraceRow> {
        let t0 = Instant::now();
        let (model, hooks, weights, loss) =
            (&self.cfg.model, self.hooks, &self.weights, &self.cfg.loss);
        let results: Vec<Result<Option<ExampleGrad>>> = self.pool.install(|| {
            batch
                .par_iter()
                .map(|ex| example_gradients(model, hooks, weights, ex, loss))
                .collect()
        });
        self.step += 1;
        let mut parts = Vec::with_capacity(results.len());
        for r in results {
            parts.push(r?);
        }
        let n = parts.len().max(1) as f64;
        let skipped = parts.iter().any(Option::is_none) || parts.is_empty();
        let mut row = TraceRow {
            step: self.step,
            loss: f64::NAN,
            si_sdr: f64::NAN,
            wall_ms: 0,
            skipped,
        };
        if !skipped {
            let parts: Vec<ExampleGrad> = parts.into_iter().flatten().collect();
            let mut grads = parts[0].grads.clone();
            for p in &parts[1..] {
                for (acc, g) in grads.iter_mut().zip(&p.grads) {
                    acc.iter_mut().zip(g).for_each(|(a, b)| *a += b);
                }
            }
            grads.iter_mut().flatten().for_each(|g| *g /= n);
            clip_global_norm(&mut grads, self.cfg.grad_clip_norm);
            self.adam.step(
                self.weights.iter_mut().map(|(_, t)| t.data.as_mut_slice()),
                &grads,
            );
            row.loss = parts.iter().map(|p| p.loss).sum::<f64>() / n;
            row.si_sdr = parts.iter().map(|p| p.si_sdr).sum::<f64>() / n;
        }
        row.wall_ms = t0.elapsed().as_millis() as u64;
        Ok(row)
    }
}

/// Result of [`train_loop`].
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub weights: ModelWeights,
    pub curve: Vec<TraceRow>,
    pub skipped_steps: usize,
}

#[derive(Serialize)]
struct CheckpointSidecar<'a> {
    step: usize,
    variant: Variant,
    config: &'a TrainConfig,
}

/// Writes `weights` to `path` and the config sidecar next to it.
pub fn save_checkpoint(
    path: &Path,
    weights: &ModelWeights,
    cfg: &TrainConfig,
    step: usize,
) -> Result<()> {
    weights.save(path)?;
    let sidecar = CheckpointSidecar {
        step,
        variant: cfg.variant,
        config: cfg,
    };
    let json = serde_json::to_string_pretty(&sidecar)?;
    write_file(&sidecar_path(path), json.as_bytes())
}

pub fn sidecar_path(weights: &Path) -> PathBuf {
    let mut p = weights.as_os_str().to_owned();
    p.push(".json");
    PathBuf::from(p)
}

/// Full training run. Scenes are rendered once; each epoch visits them in
/// a seeded order. With `checkpoint_dir` set and `checkpoint_every > 0`,
/// checkpoints are written there.
pub fn train_loop(
    cfg: &TrainConfig,
    jobs: usize,
    checkpoint_dir: Option<&Path>,
    mut progress: impl FnMut(&TraceRow),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let examples = build_examples(&cfg.model, &cfg.scenes, cfg.seed, 0, cfg.train_scenes)?;
    let weights = ModelWeights::init(&cfg.model, cfg.seed)?;
    if let Some(dir) = checkpoint_dir.filter(|_| cfg.checkpoint_every > 0) {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut trainer = Trainer::new(cfg.clone(), weights, jobs)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x5348_5546);
    let total = cfg.total_steps();
    let mut curve = Vec::with_capacity(total);
    let mut order: Vec<usize> = (0..examples.len()).collect();
    'outer: for _ in 0..cfg.epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(cfg.batch_size) {
            if trainer.steps_taken() >= total {
                break 'outer;
            }
            let batch: Vec<&TrainingExample> = chunk.iter().map(|&i| &examples[i]).collect();
            let row = trainer.train_step(&batch)?;
            progress(&row);
            curve.push(row);
            if let Some(dir) = checkpoint_dir {
                if cfg.checkpoint_every > 0 && row.step % cfg.checkpoint_every == 0 {
                    let path = dir.join(format!("checkpoint_{:06}.nkw", row.step));
                    save_checkpoint(&path, trainer.weights(), cfg, row.step)?;
                }
            }
        }
    }
    Ok(TrainOutcome {
        skipped_steps: curve.iter().filter(|r| r.skipped).count(),
        weights: trainer.into_weights(),
        curve,
    })
}

/// SI-SDR of the model output on each example; `HookSet::NONE` scores the
/// classical filter.
pub fn score_examples(
    model: &ModelConfig,
    hooks: HookSet,
    weights: &ModelWeights,
    examples: &[TrainingExample],
    loss: &LossConfig,
) -> Result<Vec<f64>> {
    examples
        .par_iter()
        .map(|ex| {
            let nk = NeuralKalman::for_model(*model, hooks)?;
            let mut b = Eval::new();
            let params = Params::new(&mut b, weights);
            Ok(example_loss(&mut b, &nk, &params, ex, loss)?.si_sdr)
        })
        .collect()
}
