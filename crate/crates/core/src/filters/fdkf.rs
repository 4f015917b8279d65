//! Frequency-domain Kalman filter in diagonal (per-bin) form.
//!
//! Per frame `k`, with `X` the transform of the last `M` far-end samples
//! and `Y` the transform of `[0_R; mic block]`:
//!
//! ```text
//! S = Y - keep_last(X ∘ W)
//! K = P·conj(X) / (|X|²·P + 2·ψvv + δ)
//! W ← A·(W + proj(K ∘ S))            then W ← t(W) when hooked
//! Φ ← γ·Φ + (1 - γ)·|W_old|²
//! P ← A²·(1 - ½·Re(K ∘ X))·P + ψΔΔ,  ψΔΔ = (1 - A²)·Φ
//! ψvv ← β·ψvv + (1 - β)·|S|²
//! ```

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::{FdkfHooks, FrameContext, NoHooks, StreamBuffers};
use crate::error::{Error, Result};
use crate::signal::{BlockConfig, FftPlan, Half};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FdkfConfig {
    pub block: BlockConfig,
    /// Transition factor used when no hook provides one.
    pub a_default: f64,
    /// Smoothing of the observation-noise estimate.
    pub psi_smoothing: f64,
    /// Smoothing γ of the path power `Φ` behind the process noise; 0 uses
    /// the instantaneous `|W|²`.
    pub psi_dd_smoothing: f64,
    pub p_init: f64,
    pub regularizer: f64,
    /// Constraint applied to the filter update. `first` is the usual
    /// weight constraint; `last` reuses the measurement projection.
    pub update_projection: Half,
}

impl Default for FdkfConfig {
    fn default() -> Self {
        Self {
            block: BlockConfig::DEFAULT_16K,
            a_default: 0.999,
            psi_smoothing: 0.9,
            psi_dd_smoothing: 0.9,
            p_init: 10.0,
            regularizer: 1e-10,
            update_projection: Half::First,
        }
    }
}

impl FdkfConfig {
    pub fn with_block(block: BlockConfig) -> Self {
        Self {
            block,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.block.validate()?;
        if !(0.0..=1.0).contains(&self.a_default) {
            return Err(Error::Config(format!(
                "a_default {} outside [0, 1]",
                self.a_default
            )));
        }
        if !(self.psi_smoothing > 0.0 && self.psi_smoothing < 1.0) {
            return Err(Error::Config("psi_smoothing must lie in (0, 1)".into()));
        }
        if !(0.0..1.0).contains(&self.psi_dd_smoothing) {
            return Err(Error::Config("psi_dd_smoothing must lie in [0, 1)".into()));
        }
        if !(self.p_init >= 0.0) || !(self.regularizer > 0.0) {
            return Err(Error::Config(
                "p_init must be >= 0 and regularizer > 0".into(),
            ));
        }
        Ok(())
    }
}

/// Per-bin filter state; all vectors have `M` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct FdkfState {
    pub w: Vec<Complex64>,
    pub p: Vec<f64>,
    pub psi_vv: Vec<f64>,
    /// Smoothed per-bin path power `Φ`.
    pub w_power: Vec<f64>,
    /// Transition factor used in the most recent update.
    pub a: f64,
    pub frame: usize,
}

impl FdkfState {
    pub fn new(cfg: &FdkfConfig) -> Self {
        let m = cfg.block.fft_size;
        Self {
            w: vec![Complex64::new(0.0, 0.0); m],
            p: vec![cfg.p_init; m],
            psi_vv: vec![0.0; m],
            w_power: vec![0.0; m],
            a: cfg.a_default,
            frame: 0,
        }
    }
}

/// What one frame did, for traces and ERLE bookkeeping.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FrameDiagnostics {
    pub frame: usize,
    pub a: f64,
    pub gain_norm: f64,
    pub mic_energy: f64,
    pub output_energy: f64,
}

#[derive(Debug, Clone)]
pub struct Fdkf {
    cfg: FdkfConfig,
    plan: FftPlan,
    state: FdkfState,
    buffers: StreamBuffers,
}

impl Fdkf {
    pub fn new(cfg: FdkfConfig) -> Result<Self> {
        cfg.validate()?;
        Ok(Self {
            plan: FftPlan::new(cfg.block.fft_size)?,
            state: FdkfState::new(&cfg),
            buffers: StreamBuffers::new(cfg.block),
            cfg,
        })
    }

    pub fn config(&self) -> &FdkfConfig {
        &self.cfg
    }

    pub fn state(&self) -> &FdkfState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut FdkfState {
        &mut self.state
    }

    /// First `R` taps of the time-domain filter estimate.
    pub fn impulse_response(&self) -> Vec<f64> {
        let mut h = self.plan.inverse_real(&self.state.w);
        h.truncate(self.cfg.block.hop);
        h
    }

    /// Measurement step: near-end estimate `S = Y - keep_last(X ∘ W)`.
    pub fn predict(&self, x: &[Complex64], y: &[Complex64]) -> Result<Vec<Complex64>> {
        let m = self.cfg.block.fft_size;
        check_len(x.len(), m)?;
        check_len(y.len(), m)?;
        let echo: Vec<Complex64> = x.iter().zip(&self.state.w).map(|(a, b)| a * b).collect();
        let echo = self.plan.project(&echo, Half::Last);
        Ok(y.iter().zip(&echo).map(|(a, b)| a - b).collect())
    }

    /// Diagonal Kalman gain.
    pub fn gain(&self, x: &[Complex64]) -> Result<Vec<Complex64>> {
        check_len(x.len(), self.cfg.block.fft_size)?;
        Ok(kalman_gain(
            x,
            &self.state.p,
            &self.state.psi_vv,
            self.cfg.regularizer,
        ))
    }

    /// State equation, covariance recursion and noise tracking. On a
    /// non-finite result the state is left untouched.
    pub fn update(
        &mut self,
        x: &[Complex64],
        k: &[Complex64],
        s_hat: &[Complex64],
        a: f64,
        hooks: &mut dyn FdkfHooks,
    ) -> Result<()> {
        let m = self.cfg.block.fft_size;
        for len in [x.len(), k.len(), s_hat.len()] {
            check_len(len, m)?;
        }
        let st = &self.state;
        let ks: Vec<Complex64> = k.iter().zip(s_hat).map(|(a, b)| a * b).collect();
        let delta_w = self.plan.project(&ks, self.cfg.update_projection);
        let mut w_new: Vec<Complex64> =
            st.w.iter()
                .zip(&delta_w)
                .map(|(w, d)| (w + d) * a)
                .collect();
        if let Some(t) = hooks.transition(&w_new) {
            check_len(t.len(), m)?;
            w_new = t;
        }

        let a2 = a * a;
        let gamma = self.cfg.psi_dd_smoothing;
        let w_power: Vec<f64> = st
            .w_power
            .iter()
            .zip(&st.w)
            .map(|(p, w)| gamma * p + (1.0 - gamma) * w.norm_sqr())
            .collect();
        let (psi_vv_new, psi_dd) = match hooks.covariances(s_hat, &w_new) {
            Some((vv, dd)) => {
                check_len(vv.len(), m)?;
                check_len(dd.len(), m)?;
                (vv, dd)
            }
            None => {
                let beta = self.cfg.psi_smoothing;
                let vv = st
                    .psi_vv
                    .iter()
                    .zip(s_hat)
                    .map(|(p, s)| beta * p + (1.0 - beta) * s.norm_sqr())
                    .collect();
                let dd = w_power.iter().map(|p| (1.0 - a2) * p).collect();
                (vv, dd)
            }
        };
        let p_new: Vec<f64> = (0..m)
            .map(|f| (a2 * (1.0 - 0.5 * (k[f] * x[f]).re) * st.p[f] + psi_dd[f]).max(0.0))
            .collect();
        let psi_vv_new: Vec<f64> = psi_vv_new.into_iter().map(|v| v.max(0.0)).collect();

        let frame = st.frame;
        if w_new.iter().any(|c| !c.is_finite()) {
            return Err(Error::Diverged {
                frame,
                what: "filter estimate",
            });
        }
        if p_new.iter().chain(&psi_vv_new).any(|v| !v.is_finite()) {
            return Err(Error::Diverged {
                frame,
                what: "covariance",
            });
        }
        self.state.w = w_new;
        self.state.p = p_new;
        self.state.psi_vv = psi_vv_new;
        self.state.w_power = w_power;
        self.state.a = a;
        self.state.frame += 1;
        Ok(())
    }

    /// One full frame: predict, gain, update. Returns `R` near-end samples.
    pub fn step(
        &mut self,
        far_block: &[f64],
        mic_block: &[f64],
        hooks: &mut dyn FdkfHooks,
    ) -> Result<(Vec<f64>, FrameDiagnostics)> {
        let r = self.cfg.block.hop;
        check_len(far_block.len(), r)?;
        check_len(mic_block.len(), r)?;
        self.buffers.push(far_block, mic_block);
        let x = self.plan.forward_real(&self.buffers.far);
        let y = self.plan.forward_real(&self.buffers.mic_padded());

        hooks.begin_frame(&FrameContext {
            frame: self.state.frame,
            far_window: &self.buffers.far,
            mic_window: &self.buffers.mic,
            x: &x,
        })?;
        let x = match hooks.farend() {
            Some(xh) => {
                check_len(xh.len(), self.cfg.block.fft_size)?;
                xh
            }
            None => x,
        };
        let a = hooks
            .transition_factor()
            .map_or(self.cfg.a_default, |a| a.clamp(0.0, 1.0));

        let s_hat = self.predict(&x, &y)?;
        let k = self.gain(&x)?;
        let gain_norm = k.iter().map(|c| c.norm_sqr()).sum::<f64>().sqrt();
        let frame = self.state.frame;
        self.update(&x, &k, &s_hat, a, hooks)?;

        let out = self.plan.inverse_real(&s_hat)[r..].to_vec();
        let diag = FrameDiagnostics {
            frame,
            a,
            gain_norm,
            mic_energy: mic_block.iter().map(|v| v * v).sum(),
            output_energy: out.iter().map(|v| v * v).sum(),
        };
        Ok((out, diag))
    }

    /// Runs over whole signals, zero-padding the final partial block.
    pub fn process(
        &mut self,
        far: &[f64],
        mic: &[f64],
        hooks: &mut dyn FdkfHooks,
    ) -> Result<(Vec<f64>, Vec<FrameDiagnostics>)> {
        check_len(mic.len(), far.len())?;
        let r = self.cfg.block.hop;
        let mut out = Vec::with_capacity(far.len() + r);
        let mut diags = Vec::new();
        for (fb, mb) in super::blocks(far, mic, r) {
            let (o, d) = self.step(&fb, &mb, hooks)?;
            out.extend(o);
            diags.push(d);
        }
        out.truncate(far.len());
        Ok((out, diags))
    }

    pub fn process_plain(&mut self, far: &[f64], mic: &[f64]) -> Result<Vec<f64>> {
        Ok(self.process(far, mic, &mut NoHooks)?.0)
    }
}

pub(crate) fn kalman_gain(
    x: &[Complex64],
    p: &[f64],
    psi_vv: &[f64],
    delta: f64,
) -> Vec<Complex64> {
    x.iter()
        .zip(p)
        .zip(psi_vv)
        .map(|((x, &p), &psi)| x.conj() * (p / (x.norm_sqr() * p + 2.0 * psi + delta)))
        .collect()
}

fn check_len(actual: usize, expected: usize) -> Result<()> {
    if actual != expected {
        return Err(Error::Length { expected, actual });
    }
    Ok(())
}
