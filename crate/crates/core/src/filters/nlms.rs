use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use super::StreamBuffers;
use crate::error::{Error, Result};
use crate::signal::{BlockConfig, FftPlan, Half};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct NlmsConfig {
    pub block: BlockConfig,
    /// Step size in `[0, 2)`.
    pub mu: f64,
    /// Smoothing of the per-bin far-end power.
    pub power_smoothing: f64,
    pub regularizer: f64,
}

impl Default for NlmsConfig {
    fn default() -> Self {
        Self {
            block: BlockConfig::DEFAULT_16K,
            mu: 0.5,
            power_smoothing: 0.9,
            regularizer: 1e-10,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct NlmsState {
    pub w: Vec<Complex64>,
    pub power: Vec<f64>,
}

/// Constrained frequency-domain block NLMS, no double-talk detection.
#[derive(Debug, Clone)]
pub struct Nlms {
    cfg: NlmsConfig,
    plan: FftPlan,
    state: NlmsState,
    buffers: StreamBuffers,
}

impl Nlms {
    pub fn new(cfg: NlmsConfig) -> Result<Self> {
        cfg.block.validate()?;
        if !(0.0..2.0).contains(&cfg.mu) {
            return Err(Error::Config(format!(
                "NLMS step {} outside [0, 2)",
                cfg.mu
            )));
        }
        if !(cfg.power_smoothing > 0.0 && cfg.power_smoothing < 1.0) {
            return Err(Error::Config("power_smoothing must lie in (0, 1)".into()));
        }
        let m = cfg.block.fft_size;
        Ok(Self {
            plan: FftPlan::new(m)?,
            state: NlmsState {
                w: vec![Complex64::new(0.0, 0.0); m],
                power: vec![0.0; m],
            },
            buffers: StreamBuffers::new(cfg.block),
            cfg,
        })
    }

    pub fn config(&self) -> &NlmsConfig {
        &self.cfg
    }

    pub fn state(&self) -> &NlmsState {
        &self.state
    }

    pub fn state_mut(&mut self) -> &mut NlmsState {
        &mut self.state
    }

    pub fn impulse_response(&self) -> Vec<f64> {
        let mut h = self.plan.inverse_real(&self.state.w);
        h.truncate(self.cfg.block.hop);
        h
    }

    pub fn step(&mut self, far_block: &[f64], mic_block: &[f64]) -> Result<Vec<f64>> {
        let r = self.cfg.block.hop;
        if far_block.len() != r || mic_block.len() != r {
            return Err(Error::Length {
                expected: r,
                actual: far_block.len().min(mic_block.len()),
            });
        }
        self.buffers.push(far_block, mic_block);
        let x = self.plan.forward_real(&self.buffers.far);
        let echo: Vec<Complex64> = x.iter().zip(&self.state.w).map(|(a, b)| a * b).collect();
        let echo_t = self.plan.inverse_real(&echo);
        let err: Vec<f64> = mic_block
            .iter()
            .zip(&echo_t[r..])
            .map(|(m, e)| m - e)
            .collect();

        let mut padded = vec![0.0; 2 * r];
        padded[r..].copy_from_slice(&err);
        let e = self.plan.forward_real(&padded);
        let beta = self.cfg.power_smoothing;
        for (p, xf) in self.state.power.iter_mut().zip(&x) {
            *p = beta * *p + (1.0 - beta) * xf.norm_sqr();
        }
        let grad: Vec<Complex64> = x
            .iter()
            .zip(&e)
            .zip(&self.state.power)
            .map(|((xf, ef), p)| xf.conj() * ef / (p + self.cfg.regularizer))
            .collect();
        let grad = self.plan.project(&grad, Half::First);
        if grad.iter().any(|c| !c.is_finite()) {
            return Err(Error::Diverged {
                frame: 0,
                what: "NLMS gradient",
            });
        }
        for (w, g) in self.state.w.iter_mut().zip(&grad) {
            *w += g * self.cfg.mu;
        }
        Ok(err)
    }

    pub fn process(&mut self, far: &[f64], mic: &[f64]) -> Result<Vec<f64>> {
        if far.len() != mic.len() {
            return Err(Error::Length {
                expected: far.len(),
                actual: mic.len(),
            });
        }
        let mut out = Vec::with_capacity(far.len());
        for (fb, mb) in super::blocks(far, mic, self.cfg.block.hop) {
            out.extend(self.step(&fb, &mb)?);
        }
        out.truncate(far.len());
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::fft;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()
    }

    fn convolve(h: &[f64], x: &[f64]) -> Vec<f64> {
        (0..x.len())
            .map(|n| {
                (0..h.len())
                    .filter(|&j| j <= n)
                    .map(|j| h[j] * x[n - j])
                    .sum()
            })
            .collect()
    }

    fn cfg(mu: f64) -> NlmsConfig {
        NlmsConfig {
            block: BlockConfig::from_hop(16).unwrap(),
            mu,
            ..Default::default()
        }
    }

    #[test]
    fn zero_step_freezes_filter() {
        let mut f = Nlms::new(cfg(0.0)).unwrap();
        let mut h = noise(1, 16);
        h.resize(32, 0.0);
        let w0 = fft(&h).unwrap().bins;
        f.state_mut().w = w0.clone();
        let far = noise(2, 320);
        let mic = noise(3, 320);
        let out = f.process(&far, &mic).unwrap();
        assert_eq!(f.state().w, w0);
        let echo = convolve(&h[..16], &far);
        for n in 16..320 {
            assert!((out[n] - (mic[n] - echo[n])).abs() < 1e-12);
        }
    }

    #[test]
    fn misalignment_decreases_on_linear_echo() {
        let mut f = Nlms::new(cfg(0.5)).unwrap();
        let h = noise(4, 16);
        let far = noise(5, 16 * 300);
        let mic = convolve(&h, &far);
        let norm: f64 = h.iter().map(|v| v * v).sum();
        let mut prev = f64::INFINITY;
        for chunk in 0..6 {
            let range = chunk * 160..(chunk + 1) * 160;
            f.process(&far[range.clone()], &mic[range]).unwrap();
            let est = f.impulse_response();
            let err: f64 = h.iter().zip(&est).map(|(a, b)| (a - b).powi(2)).sum();
            let mis = 10.0 * (err / norm).log10();
            assert!(mis < prev, "chunk {chunk}: {mis} !< {prev}");
            prev = mis;
        }
        f.process(&far[960..], &mic[960..]).unwrap();
        let est = f.impulse_response();
        let err: f64 = h.iter().zip(&est).map(|(a, b)| (a - b).powi(2)).sum();
        assert!(10.0 * (err / norm).log10() < -20.0);
    }

    #[test]
    fn step_size_validated() {
        assert!(Nlms::new(cfg(2.0)).is_err());
        assert!(Nlms::new(cfg(-0.1)).is_err());
    }
}
