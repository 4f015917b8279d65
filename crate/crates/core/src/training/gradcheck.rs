//! End-to-end gradient check of the unrolled model on a short synthetic
//! example.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::example::{ModelObjective, TrainingExample};
use super::LossConfig;
use crate::autodiff::{grad_check_at, random_probes, FdOptions, GradCheckReport, Stencil};
use crate::error::{Error, Result};
use crate::neural::{ModelConfig, ModelWeights, NeuralKalman, Variant};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradCheckConfig {
    pub model: ModelConfig,
    pub variant: Variant,
    pub frames: usize,
    pub probes: usize,
    pub step: f64,
    pub stencil: Stencil,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
    /// Standard deviation of noise added to the initial weights so that
    /// zero-initialized heads are exercised too.
    pub perturb: f64,
    pub seed: u64,
    pub loss: LossConfig,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            model: ModelConfig::desk(),
            variant: Variant::GPsiTA,
            frames: 10,
            probes: 100,
            step: 1e-2,
            stencil: Stencil::Ridders,
            floor: 1e-6,
            perturb: 0.05,
            seed: 0,
            loss: LossConfig::default(),
        }
    }
}

/// White far-end through a random `R`-tap path, clipped, plus a white
/// near-end at roughly 0 dB SER.
pub fn synthetic_example(model: &ModelConfig, frames: usize, seed: u64) -> Result<TrainingExample> {
    let r = model.block.hop;
    let n = frames * r;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(0.0, 0.1).map_err(|e| Error::Config(e.to_string()))?;
    let far: Vec<f64> = (0..n).map(|_| normal.sample(&mut rng)).collect();
    let near: Vec<f64> = (0..n).map(|_| 0.5 * normal.sample(&mut rng)).collect();
    let h: Vec<f64> = (0..r)
        .map(|j| rng.random_range(-1.0..1.0) * (-(j as f64) / 6.0).exp())
        .collect();
    let mic: Vec<f64> = (0..n)
        .map(|t| {
            let echo: f64 = (0..r.min(t + 1))
                .map(|j| h[j] * far[t - j].clamp(-0.15, 0.15))
                .sum();
            echo + near[t]
        })
        .collect();
    TrainingExample::new(model, &far, &mic, &near)
}

pub fn model_grad_check(cfg: &GradCheckConfig) -> Result<GradCheckReport> {
    if cfg.frames == 0 || cfg.probes == 0 {
        return Err(Error::Config(
            "gradient check needs frames >= 1 and probes >= 1".into(),
        ));
    }
    let nk = NeuralKalman::for_model(cfg.model, cfg.variant.hooks())?;
    let mut weights = ModelWeights::init(&cfg.model, cfg.seed)?;
    if cfg.perturb > 0.0 {
        let noise = Normal::new(0.0, cfg.perturb).map_err(|e| Error::Config(e.to_string()))?;
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed ^ 0xA5A5);
        for (_, t) in weights.iter_mut() {
            t.data.iter_mut().for_each(|v| *v += noise.sample(&mut rng));
        }
    }
    let example = synthetic_example(&cfg.model, cfg.frames, cfg.seed)?;
    let params: Vec<(String, Vec<f64>)> = weights
        .iter()
        .map(|(n, t)| (n.clone(), t.data.clone()))
        .collect();
    let examples = [example];
    let obj = ModelObjective {
        nk: &nk,
        examples: &examples,
        names: params.iter().map(|(n, _)| n.clone()).collect(),
        loss: cfg.loss,
    };
    let opts = FdOptions {
        step: cfg.step,
        floor: cfg.floor,
        stencil: cfg.stencil,
    };
    grad_check_at(
        &obj,
        &params,
        random_probes(&params, cfg.seed),
        cfg.probes,
        &opts,
    )
}
