//! Data-only frame preparation: filter spectra, network features and the
//! reference history for the complex ratio filter. Nothing here depends on
//! learned weights, so training computes it once per scene.

use num_complex::Complex64;

use super::{CrfReference, ModelConfig};
use crate::error::{Error, Result};
use crate::filters::StreamBuffers;
use crate::signal::{sqrt_hann, FftPlan};

pub const FEATURE_EPS: f64 = 1e-12;
const VARIANCE_FLOOR: f64 = 1e-3;

/// Everything the model needs from one frame of input.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameInputs {
    /// Transform of the last `M` far-end samples (full length).
    pub x: Vec<Complex64>,
    /// Transform of `[0_R; mic block]` (full length).
    pub y: Vec<Complex64>,
    pub mic_block: Vec<f64>,
    /// `10·F` features, bin-major.
    pub features: Vec<f64>,
    /// One-sided spectrum the cRF filters.
    pub reference: Vec<Complex64>,
}

/// `a·conj(b) / (|a||b| + ε)`.
pub fn corr(a: Complex64, b: Complex64) -> Complex64 {
    a * b.conj() / (a.norm() * b.norm() + FEATURE_EPS)
}

/// Exponential per-bin statistics of log power with bias correction.
#[derive(Debug, Clone, PartialEq)]
pub struct RunningStats {
    decay: f64,
    weight: f64,
    mean: Vec<f64>,
    sq: Vec<f64>,
}

impl RunningStats {
    pub fn new(bins: usize, decay: f64) -> Self {
        Self {
            decay,
            weight: 0.0,
            mean: vec![0.0; bins],
            sq: vec![0.0; bins],
        }
    }

    /// Folds in one frame and returns it normalized.
    pub fn normalize(&mut self, values: &[f64]) -> Vec<f64> {
        let d = self.decay;
        self.weight = d * self.weight + (1.0 - d);
        values
            .iter()
            .enumerate()
            .map(|(f, &v)| {
                self.mean[f] = d * self.mean[f] + (1.0 - d) * v;
                self.sq[f] = d * self.sq[f] + (1.0 - d) * v * v;
                let m = self.mean[f] / self.weight;
                let var = (self.sq[f] / self.weight - m * m).max(0.0);
                (v - m) / (var + VARIANCE_FLOOR).sqrt()
            })
            .collect()
    }
}

/// Carried state of [`extract_features`].
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureState {
    prev_y: Vec<Complex64>,
    prev_x: Vec<Complex64>,
    stats_y: RunningStats,
    stats_x: RunningStats,
}

impl FeatureState {
    pub fn new(bins: usize, decay: f64) -> Self {
        Self {
            prev_y: vec![Complex64::new(0.0, 0.0); bins],
            prev_x: vec![Complex64::new(0.0, 0.0); bins],
            stats_y: RunningStats::new(bins, decay),
            stats_x: RunningStats::new(bins, decay),
        }
    }
}

/// Per bin: normalized log power of `Y` and `X`, then Re/Im of the
/// temporal correlation of `Y`, of `X`, the frequency correlation of `Y`
/// and the channel correlation of `Y` with `X`.
pub fn extract_features(
    y: &[Complex64],
    x: &[Complex64],
    state: &mut FeatureState,
) -> Result<Vec<f64>> {
    let bins = state.prev_y.len();
    if y.len() != bins || x.len() != bins {
        return Err(Error::Length {
            expected: bins,
            actual: y.len().min(x.len()),
        });
    }
    let lp = |s: &[Complex64]| -> Vec<f64> {
        s.iter()
            .map(|c| (c.norm_sqr() + FEATURE_EPS).ln())
            .collect()
    };
    let ny = state.stats_y.normalize(&lp(y));
    let nx = state.stats_x.normalize(&lp(x));
    let zero = Complex64::new(0.0, 0.0);
    let mut out = Vec::with_capacity(ModelConfig::FEATURES_PER_BIN * bins);
    for f in 0..bins {
        let cy = corr(y[f], state.prev_y[f]);
        let cx = corr(x[f], state.prev_x[f]);
        let cf = if f > 0 { corr(y[f], y[f - 1]) } else { zero };
        let cyx = corr(y[f], x[f]);
        out.extend_from_slice(&[
            ny[f], nx[f], cy.re, cy.im, cx.re, cx.im, cf.re, cf.im, cyx.re, cyx.im,
        ]);
    }
    state.prev_y.copy_from_slice(y);
    state.prev_x.copy_from_slice(x);
    Ok(out)
}

/// Streaming producer of [`FrameInputs`].
#[derive(Debug, Clone)]
pub struct Frontend {
    cfg: ModelConfig,
    plan: FftPlan,
    window: Vec<f64>,
    buffers: StreamBuffers,
    features: FeatureState,
}

impl Frontend {
    pub fn new(cfg: &ModelConfig) -> Result<Self> {
        cfg.validate()?;
        let m = cfg.block.fft_size;
        Ok(Self {
            cfg: *cfg,
            plan: FftPlan::new(m)?,
            window: sqrt_hann(m),
            buffers: StreamBuffers::new(cfg.block),
            features: FeatureState::new(cfg.n_bins, cfg.feature_decay),
        })
    }

    pub fn push(&mut self, far_block: &[f64], mic_block: &[f64]) -> Result<FrameInputs> {
        let r = self.cfg.block.hop;
        if far_block.len() != r || mic_block.len() != r {
            return Err(Error::Length {
                expected: r,
                actual: far_block.len().min(mic_block.len()),
            });
        }
        self.buffers.push(far_block, mic_block);
        let f = self.cfg.n_bins;
        let x = self.plan.forward_real(&self.buffers.far);
        let y = self.plan.forward_real(&self.buffers.mic_padded());
        let windowed =
            |s: &[f64]| -> Vec<f64> { s.iter().zip(&self.window).map(|(a, b)| a * b).collect() };
        let yw = self.plan.forward_real(&windowed(&self.buffers.mic));
        let xw = self.plan.forward_real(&windowed(&self.buffers.far));
        let features = extract_features(&yw[..f], &xw[..f], &mut self.features)?;
        let reference = match self.cfg.crf_reference {
            CrfReference::Farend => x[..f].to_vec(),
            CrfReference::Mic => self.plan.forward_real(&self.buffers.mic)[..f].to_vec(),
        };
        Ok(FrameInputs {
            x,
            y,
            mic_block: mic_block.to_vec(),
            features,
            reference,
        })
    }

    /// All frames of two equally long signals; the last block is zero padded.
    pub fn prepare(cfg: &ModelConfig, far: &[f64], mic: &[f64]) -> Result<Vec<FrameInputs>> {
        if far.len() != mic.len() {
            return Err(Error::Length {
                expected: far.len(),
                actual: mic.len(),
            });
        }
        let mut fe = Self::new(cfg)?;
        crate::filters::blocks(far, mic, cfg.block.hop)
            .map(|(fb, mb)| fe.push(&fb, &mb))
            .collect()
    }
}
