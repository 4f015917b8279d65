//! Pre-rendered training examples and the differentiable per-example loss.

use crate::autodiff::{Backend, Objective};
use crate::error::{Error, Result};
use crate::neural::{FrameInputs, Frontend, ModelConfig, NeuralKalman, Params};
use crate::scene::{render_scene, SceneSpec};
use crate::signal::FftPlan;

use super::{loss_var, si_sdr, LossConfig};

/// One utterance with everything the loss needs. Immutable once built.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainingExample {
    pub frames: Vec<FrameInputs>,
    /// Near-end target, zero padded to whole blocks.
    pub target: Vec<f64>,
    /// `|S|` of the target on the filter's grid, `F` per frame.
    pub target_mag: Vec<f64>,
    /// Unprocessed microphone signal on the same grid, for reference scores.
    pub mic: Vec<f64>,
}

impl TrainingExample {
    pub fn new(cfg: &ModelConfig, far: &[f64], mic: &[f64], nearend: &[f64]) -> Result<Self> {
        if nearend.len() != far.len() {
            return Err(Error::Length {
                expected: far.len(),
                actual: nearend.len(),
            });
        }
        let frames = Frontend::prepare(cfg, far, mic)?;
        let r = cfg.block.hop;
        let f = cfg.n_bins;
        let len = frames.len() * r;
        let pad = |s: &[f64]| {
            let mut v = s.to_vec();
            v.resize(len, 0.0);
            v
        };
        let target = pad(nearend);
        if target.iter().all(|&v| v == 0.0) {
            return Err(Error::Loss(
                "training example has a silent near-end target".into(),
            ));
        }
        let plan = FftPlan::new(cfg.block.fft_size)?;
        let mut target_mag = Vec::with_capacity(frames.len() * f);
        let mut buf = vec![0.0; cfg.block.fft_size];
        for block in target.chunks(r) {
            buf[r..].copy_from_slice(block);
            target_mag.extend(plan.forward_real(&buf)[..f].iter().map(|c| c.norm()));
        }
        Ok(Self {
            frames,
            target,
            target_mag,
            mic: pad(mic),
        })
    }

    pub fn from_spec(cfg: &ModelConfig, spec: &SceneSpec) -> Result<Self> {
        let scene = spec.build()?;
        let rendered = render_scene(&scene)?;
        Self::new(
            cfg,
            &scene.farend.samples,
            &rendered.mic.samples,
            &rendered.nearend.samples,
        )
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }
}

/// Loss handle plus the plain SI-SDR of the estimate.
pub struct ExampleForward<T> {
    pub loss: T,
    pub si_sdr: f64,
    pub estimate: Vec<f64>,
}

/// Unrolls the model over the whole example and evaluates the loss.
pub fn example_loss<B: Backend>(
    b: &mut B,
    nk: &NeuralKalman,
    params: &Params<B::T>,
    example: &TrainingExample,
    cfg: &LossConfig,
) -> Result<ExampleForward<B::T>> {
    let run = nk.run(b, params, &example.frames)?;
    let est = b.concat(&run.blocks);
    let spec = concat_spectra(b, &run.spectra);
    let loss = loss_var(b, &example.target, &est, &example.target_mag, &spec, cfg)?;
    let estimate = b.value(&est).to_vec();
    let score = si_sdr(&example.target, &estimate, cfg.si_sdr_cap)?;
    Ok(ExampleForward {
        loss,
        si_sdr: score,
        estimate,
    })
}

/// Joins per-frame split spectra into one split vector `[re...; im...]`.
fn concat_spectra<B: Backend>(b: &mut B, spectra: &[B::T]) -> B::T {
    let mut re = Vec::with_capacity(spectra.len());
    let mut im = Vec::with_capacity(spectra.len());
    for s in spectra {
        let n = b.len(s) / 2;
        re.push(b.slice(s, 0, n));
        im.push(b.slice(s, n, n));
    }
    let re = b.concat(&re);
    let im = b.concat(&im);
    b.concat(&[re, im])
}

/// Mean loss over examples as a function of the named weight tensors.
pub struct ModelObjective<'a> {
    pub nk: &'a NeuralKalman,
    pub examples: &'a [TrainingExample],
    pub names: Vec<String>,
    pub loss: LossConfig,
}

impl Objective for ModelObjective<'_> {
    fn eval<B: Backend>(&self, b: &mut B, params: &[B::T]) -> Result<B::T> {
        let p = Params::from_values(self.names.clone(), params.to_vec());
        let mut total: Option<B::T> = None;
        for ex in self.examples {
            let f = example_loss(b, self.nk, &p, ex, &self.loss)?;
            total = Some(match total {
                Some(t) => b.add(&t, &f.loss),
                None => f.loss,
            });
        }
        let total = total.ok_or_else(|| Error::Loss("objective has no examples".into()))?;
        Ok(b.scale(&total, 1.0 / self.examples.len() as f64))
    }
}
