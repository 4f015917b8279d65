//! FFT, block framing, overlap-save constraint projections and a sqrt-Hann
//! STFT pair.
//!
//! Conventions used throughout the crate:
//! - the forward transform is unnormalized, the inverse carries the `1/M`;
//! - a *full* spectrum has `M` bins, a *one-sided* view has `M/2 + 1`;
//! - a block of `M = 2R` time samples is split into a first half (samples
//!   `0..R`) and a last half (samples `R..M`).

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A real sample buffer with its sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSignal {
    pub samples: Vec<f64>,
    pub sample_rate: u32,
}

impl TimeSignal {
    pub fn new(samples: Vec<f64>, sample_rate: u32) -> Result<Self> {
        if sample_rate == 0 {
            return Err(Error::Config("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|v| !v.is_finite()) {
            return Err(Error::Config(format!("non-finite sample at index {i}")));
        }
        Ok(Self {
            samples,
            sample_rate,
        })
    }

    pub fn zeros(len: usize, sample_rate: u32) -> Self {
        Self {
            samples: vec![0.0; len],
            sample_rate,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn energy(&self) -> f64 {
        self.samples.iter().map(|v| v * v).sum()
    }

    pub fn duration_s(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate as f64
    }
}

/// Hop `R` and transform size `M = 2R`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BlockConfig {
    pub hop: usize,
    pub fft_size: usize,
}

impl BlockConfig {
    /// 32 ms frames with a 16 ms shift at 16 kHz.
    pub const DEFAULT_16K: BlockConfig = BlockConfig {
        hop: 256,
        fft_size: 512,
    };

    pub fn new(hop: usize, fft_size: usize) -> Result<Self> {
        let cfg = Self { hop, fft_size };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn from_hop(hop: usize) -> Result<Self> {
        Self::new(hop, 2 * hop)
    }

    pub fn validate(&self) -> Result<()> {
        if self.fft_size != 2 * self.hop {
            return Err(Error::Config(format!(
                "fft size {} must be twice the hop {}",
                self.fft_size, self.hop
            )));
        }
        check_pow2(self.fft_size)
    }

    /// Number of bins in the one-sided view.
    pub fn bins(&self) -> usize {
        self.fft_size / 2 + 1
    }
}

impl Default for BlockConfig {
    fn default() -> Self {
        Self::DEFAULT_16K
    }
}

fn check_pow2(n: usize) -> Result<()> {
    if n < 2 || !n.is_power_of_two() {
        return Err(Error::Config(format!(
            "transform length {n} is not a power of two"
        )));
    }
    Ok(())
}

/// A frame of complex bins, either full length or one-sided.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrum {
    pub bins: Vec<Complex64>,
    pub frame_index: usize,
}

impl Spectrum {
    pub fn new(bins: Vec<Complex64>, frame_index: usize) -> Self {
        Self { bins, frame_index }
    }

    pub fn zeros(len: usize) -> Self {
        Self::new(vec![Complex64::new(0.0, 0.0); len], 0)
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn norm_sqr(&self) -> f64 {
        self.bins.iter().map(|c| c.norm_sqr()).sum()
    }

    /// The first `M/2 + 1` bins of a full spectrum.
    pub fn one_sided(&self) -> Spectrum {
        let m = self.bins.len();
        Spectrum::new(self.bins[..m / 2 + 1].to_vec(), self.frame_index)
    }

    /// Rebuilds a full spectrum of length `fft_size` from a one-sided view
    /// using conjugate symmetry. The imaginary parts of the DC and Nyquist
    /// bins are dropped, which is lossless for spectra of real signals.
    pub fn to_full(&self, fft_size: usize) -> Result<Spectrum> {
        if self.bins.len() != fft_size / 2 + 1 {
            return Err(Error::Length {
                expected: fft_size / 2 + 1,
                actual: self.bins.len(),
            });
        }
        Ok(Spectrum::new(
            expand_one_sided(&self.bins, fft_size),
            self.frame_index,
        ))
    }

    /// Largest `|bin[f] - conj(bin[M-f])|` over the spectrum.
    pub fn symmetry_error(&self) -> f64 {
        let m = self.bins.len();
        (1..m)
            .map(|f| (self.bins[f] - self.bins[m - f].conj()).norm())
            .fold(0.0, f64::max)
    }
}

pub(crate) fn expand_one_sided(half: &[Complex64], fft_size: usize) -> Vec<Complex64> {
    let nyq = fft_size / 2;
    let mut full = vec![Complex64::new(0.0, 0.0); fft_size];
    full[..=nyq].copy_from_slice(&half[..=nyq]);
    full[0].im = 0.0;
    full[nyq].im = 0.0;
    for f in nyq + 1..fft_size {
        full[f] = full[fft_size - f].conj();
    }
    full
}

/// Which half of an `M`-sample block a constraint projection keeps.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Half {
    First,
    Last,
}

impl Half {
    /// The real time-domain mask realizing the projection.
    pub fn mask(self, fft_size: usize) -> Vec<f64> {
        let r = fft_size / 2;
        (0..fft_size)
            .map(|n| match self {
                Half::First => (n < r) as u8 as f64,
                Half::Last => (n >= r) as u8 as f64,
            })
            .collect()
    }
}

/// Cached forward/inverse plans for one transform size.
#[derive(Clone)]
pub struct FftPlan {
    size: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for FftPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FftPlan").field("size", &self.size).finish()
    }
}

impl FftPlan {
    pub fn new(size: usize) -> Result<Self> {
        check_pow2(size)?;
        let mut planner = FftPlanner::new();
        Ok(Self {
            size,
            forward: planner.plan_fft_forward(size),
            inverse: planner.plan_fft_inverse(size),
        })
    }

    pub fn size(&self) -> usize {
        self.size
    }

    pub fn forward_real(&self, block: &[f64]) -> Vec<Complex64> {
        assert_eq!(block.len(), self.size, "fft input length");
        let mut buf: Vec<Complex64> = block.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.forward.process(&mut buf);
        buf
    }

    /// In-place unnormalized forward transform.
    pub fn forward_in_place(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.size, "fft input length");
        self.forward.process(buf);
    }

    /// In-place inverse transform including the `1/M` factor.
    pub fn inverse_in_place(&self, buf: &mut [Complex64]) {
        assert_eq!(buf.len(), self.size, "ifft input length");
        self.inverse.process(buf);
        let scale = 1.0 / self.size as f64;
        for v in buf.iter_mut() {
            *v *= scale;
        }
    }

    /// Real part of the inverse transform.
    pub fn inverse_real(&self, bins: &[Complex64]) -> Vec<f64> {
        let mut buf = bins.to_vec();
        self.inverse_in_place(&mut buf);
        buf.into_iter().map(|c| c.re).collect()
    }

    /// Zeroes the time samples outside `keep` and transforms back.
    pub fn project(&self, bins: &[Complex64], keep: Half) -> Vec<Complex64> {
        let mut buf = bins.to_vec();
        self.inverse_in_place(&mut buf);
        let r = self.size / 2;
        let zeroed = match keep {
            Half::First => r..self.size,
            Half::Last => 0..r,
        };
        for v in &mut buf[zeroed] {
            *v = Complex64::new(0.0, 0.0);
        }
        self.forward.process(&mut buf);
        buf
    }
}

pub fn fft(block: &[f64]) -> Result<Spectrum> {
    let plan = FftPlan::new(block.len())?;
    Ok(Spectrum::new(plan.forward_real(block), 0))
}

/// Real part of the inverse transform of a full spectrum.
pub fn ifft(spec: &Spectrum) -> Result<Vec<f64>> {
    let plan = FftPlan::new(spec.len())?;
    Ok(plan.inverse_real(&spec.bins))
}

fn check_full(spec: &Spectrum, config: &BlockConfig) -> Result<()> {
    config.validate()?;
    if spec.len() != config.fft_size {
        return Err(Error::Length {
            expected: config.fft_size,
            actual: spec.len(),
        });
    }
    Ok(())
}

/// Output constraint: keeps the last `R` time samples (the valid
/// overlap-save half).
pub fn project_keep_last(spec: &Spectrum, config: &BlockConfig) -> Result<Spectrum> {
    check_full(spec, config)?;
    let plan = FftPlan::new(config.fft_size)?;
    Ok(Spectrum::new(
        plan.project(&spec.bins, Half::Last),
        spec.frame_index,
    ))
}

/// Weight constraint: keeps the first `R` time samples.
pub fn project_keep_first(spec: &Spectrum, config: &BlockConfig) -> Result<Spectrum> {
    check_full(spec, config)?;
    let plan = FftPlan::new(config.fft_size)?;
    Ok(Spectrum::new(
        plan.project(&spec.bins, Half::First),
        spec.frame_index,
    ))
}

/// Periodic square-root Hann window of length `m`. Its square sums to one
/// under a hop of `m/2`.
pub fn sqrt_hann(m: usize) -> Vec<f64> {
    (0..m)
        .map(|n| (0.5 - 0.5 * (2.0 * PI * n as f64 / m as f64).cos()).sqrt())
        .collect()
}

/// Full-length STFT frames; frame `k` covers samples `kR..kR+M`.
pub fn stft(signal: &TimeSignal, config: &BlockConfig) -> Result<Vec<Spectrum>> {
    config.validate()?;
    let (r, m) = (config.hop, config.fft_size);
    if signal.len() < m {
        return Ok(Vec::new());
    }
    let plan = FftPlan::new(m)?;
    let window = sqrt_hann(m);
    let n_frames = (signal.len() - m) / r + 1;
    Ok((0..n_frames)
        .map(|k| {
            let frame: Vec<f64> = signal.samples[k * r..k * r + m]
                .iter()
                .zip(&window)
                .map(|(x, w)| x * w)
                .collect();
            Spectrum::new(plan.forward_real(&frame), k)
        })
        .collect())
}

/// Weighted overlap-add inverse of [`stft`]. Output length is
/// `(frames - 1) * R + M`; the first and last `R` samples are only covered
/// by one window and are not reconstructed exactly.
pub fn istft(frames: &[Spectrum], config: &BlockConfig, sample_rate: u32) -> Result<TimeSignal> {
    config.validate()?;
    let (r, m) = (config.hop, config.fft_size);
    if frames.is_empty() {
        return TimeSignal::new(Vec::new(), sample_rate);
    }
    let plan = FftPlan::new(m)?;
    let window = sqrt_hann(m);
    let mut out = vec![0.0; (frames.len() - 1) * r + m];
    for (k, frame) in frames.iter().enumerate() {
        if frame.len() != m {
            return Err(Error::Length {
                expected: m,
                actual: frame.len(),
            });
        }
        let time = plan.inverse_real(&frame.bins);
        for (n, (v, w)) in time.iter().zip(&window).enumerate() {
            out[k * r + n] += v * w;
        }
    }
    TimeSignal::new(out, sample_rate)
}
