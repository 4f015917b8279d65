//! Block adaptive echo cancellers: the frequency-domain Kalman filter with
//! optional learned hooks, and a constrained frequency-domain NLMS baseline.

mod fdkf;
mod nlms;

use num_complex::Complex64;

use crate::error::Result;
use crate::signal::BlockConfig;

pub use fdkf::{Fdkf, FdkfConfig, FdkfState, FrameDiagnostics};
pub use nlms::{Nlms, NlmsConfig, NlmsState};

/// Inputs visible to hooks at the start of a frame.
pub struct FrameContext<'a> {
    pub frame: usize,
    /// Last `M` far-end samples.
    pub far_window: &'a [f64],
    /// Last `M` microphone samples.
    pub mic_window: &'a [f64],
    /// Transform of `far_window`, the filter's reference spectrum.
    pub x: &'a [Complex64],
}

/// Callbacks that replace parts of the classical recursion. Every method
/// defaults to "not provided", which selects the closed-form path.
pub trait FdkfHooks {
    fn begin_frame(&mut self, _ctx: &FrameContext<'_>) -> Result<()> {
        Ok(())
    }

    /// Replacement for the reference spectrum `X(k)` (full length).
    fn farend(&mut self) -> Option<Vec<Complex64>> {
        None
    }

    fn transition_factor(&mut self) -> Option<f64> {
        None
    }

    /// Nonlinear state transition applied after `A·(W + ΔW)`.
    fn transition(&mut self, _w: &[Complex64]) -> Option<Vec<Complex64>> {
        None
    }

    /// `(ψvv, ψΔΔ)` replacing both closed-form covariance approximations.
    fn covariances(
        &mut self,
        _s_hat: &[Complex64],
        _w_new: &[Complex64],
    ) -> Option<(Vec<f64>, Vec<f64>)> {
        None
    }
}

/// The classical filter.
#[derive(Debug, Clone, Copy, Default)]
pub struct NoHooks;

impl FdkfHooks for NoHooks {}

/// Fixed per-frame transition factor schedule, for controlled experiments.
#[derive(Debug, Clone)]
pub struct ScheduledA {
    schedule: Vec<f64>,
    frame: usize,
}

impl ScheduledA {
    pub fn new(schedule: Vec<f64>) -> Self {
        Self { schedule, frame: 0 }
    }
}

impl FdkfHooks for ScheduledA {
    fn begin_frame(&mut self, ctx: &FrameContext<'_>) -> Result<()> {
        self.frame = ctx.frame;
        Ok(())
    }

    fn transition_factor(&mut self) -> Option<f64> {
        self.schedule.get(self.frame).copied()
    }
}

/// Sliding far-end window and microphone window of `M` samples.
#[derive(Debug, Clone)]
pub(crate) struct StreamBuffers {
    hop: usize,
    pub far: Vec<f64>,
    pub mic: Vec<f64>,
}

impl StreamBuffers {
    pub fn new(block: BlockConfig) -> Self {
        Self {
            hop: block.hop,
            far: vec![0.0; block.fft_size],
            mic: vec![0.0; block.fft_size],
        }
    }

    pub fn push(&mut self, far: &[f64], mic: &[f64]) {
        let r = self.hop;
        self.far.copy_within(r.., 0);
        self.far[r..].copy_from_slice(far);
        self.mic.copy_within(r.., 0);
        self.mic[r..].copy_from_slice(mic);
    }

    /// `[0_R; current mic block]`.
    pub fn mic_padded(&self) -> Vec<f64> {
        let mut v = vec![0.0; 2 * self.hop];
        v[self.hop..].copy_from_slice(&self.mic[self.hop..]);
        v
    }
}

/// Splits two equally long signals into zero-padded blocks of `r` samples.
pub(crate) fn blocks<'a>(
    far: &'a [f64],
    mic: &'a [f64],
    r: usize,
) -> impl Iterator<Item = (Vec<f64>, Vec<f64>)> + 'a {
    let n = far.len().div_ceil(r);
    (0..n).map(move |k| {
        let take = |s: &[f64]| {
            let mut b = s[k * r..((k + 1) * r).min(s.len())].to_vec();
            b.resize(r, 0.0);
            b
        };
        (take(far), take(mic))
    })
}

/// One processed block from any canceller.
#[derive(Debug, Clone, PartialEq)]
pub struct BlockOutput {
    pub samples: Vec<f64>,
    /// Transition factor used in this block, for filters that have one.
    pub a: Option<f64>,
}

/// Common streaming interface used by the evaluation harness.
pub trait Canceller {
    fn hop(&self) -> usize;
    fn process_block(&mut self, far: &[f64], mic: &[f64]) -> Result<BlockOutput>;
    /// First `R` taps of the current echo-path estimate.
    fn impulse_response(&self) -> Vec<f64>;
}

impl Canceller for Nlms {
    fn hop(&self) -> usize {
        self.config().block.hop
    }

    fn process_block(&mut self, far: &[f64], mic: &[f64]) -> Result<BlockOutput> {
        Ok(BlockOutput {
            samples: self.step(far, mic)?,
            a: None,
        })
    }

    fn impulse_response(&self) -> Vec<f64> {
        Nlms::impulse_response(self)
    }
}

/// A Kalman filter bundled with the hooks that drive it.
pub struct HookedFdkf<H> {
    pub filter: Fdkf,
    pub hooks: H,
}

impl<H: FdkfHooks> HookedFdkf<H> {
    pub fn new(filter: Fdkf, hooks: H) -> Self {
        Self { filter, hooks }
    }
}

impl<H: FdkfHooks> Canceller for HookedFdkf<H> {
    fn hop(&self) -> usize {
        self.filter.config().block.hop
    }

    fn process_block(&mut self, far: &[f64], mic: &[f64]) -> Result<BlockOutput> {
        let (samples, diag) = self.filter.step(far, mic, &mut self.hooks)?;
        Ok(BlockOutput {
            samples,
            a: Some(diag.a),
        })
    }

    fn impulse_response(&self) -> Vec<f64> {
        self.filter.impulse_response()
    }
}

impl Canceller for Fdkf {
    fn hop(&self) -> usize {
        self.config().block.hop
    }

    fn process_block(&mut self, far: &[f64], mic: &[f64]) -> Result<BlockOutput> {
        let (samples, diag) = self.step(far, mic, &mut NoHooks)?;
        Ok(BlockOutput {
            samples,
            a: Some(diag.a),
        })
    }

    fn impulse_response(&self) -> Vec<f64> {
        Fdkf::impulse_response(self)
    }
}

/// Per-run output of [`run_canceller`].
#[derive(Debug, Clone, PartialEq)]
pub struct RunTrace {
    pub output: Vec<f64>,
    /// Transition factor per block, when the canceller reports one.
    pub a: Vec<f64>,
}

/// Runs `canceller` over whole signals. The final partial block is zero
/// padded and the output trimmed to the input length.
pub fn run_canceller(canceller: &mut dyn Canceller, far: &[f64], mic: &[f64]) -> Result<RunTrace> {
    if far.len() != mic.len() {
        return Err(crate::Error::Length {
            expected: far.len(),
            actual: mic.len(),
        });
    }
    let mut output = Vec::with_capacity(far.len() + canceller.hop());
    let mut a = Vec::new();
    for (fb, mb) in blocks(far, mic, canceller.hop()) {
        let block = canceller.process_block(&fb, &mb)?;
        output.extend(block.samples);
        a.extend(block.a);
    }
    output.truncate(far.len());
    Ok(RunTrace { output, a })
}
