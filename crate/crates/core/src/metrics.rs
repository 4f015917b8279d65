//! Echo-cancellation metrics: ERLE, misalignment, SI-SDR deltas and
//! reconvergence after an echo-path change.

use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::filters::Canceller;
use crate::scene::{EchoScene, RenderedScene};
use crate::training::si_sdr;

pub const ERLE_SMOOTHING: f64 = 0.98;
pub const ERLE_CAP_DB: f64 = 80.0;
pub const MISALIGNMENT_FLOOR_DB: f64 = -100.0;
pub const RECONVERGENCE_DB: f64 = -15.0;
pub const SI_SDR_CAP_DB: f64 = 30.0;

/// Smoothed per-frame `10·log10(Σy² / Σe²)` over blocks of `hop` samples.
pub fn erle_curve(y: &[f64], e: &[f64], hop: usize) -> Result<Vec<f64>> {
    if y.len() != e.len() {
        return Err(Error::Length {
            expected: y.len(),
            actual: e.len(),
        });
    }
    if hop == 0 {
        return Err(Error::Config("hop must be > 0".into()));
    }
    let (mut py, mut pe) = (0.0, 0.0);
    let g = ERLE_SMOOTHING;
    Ok(y.chunks(hop)
        .zip(e.chunks(hop))
        .map(|(yb, eb)| {
            py = g * py + (1.0 - g) * yb.iter().map(|v| v * v).sum::<f64>();
            pe = g * pe + (1.0 - g) * eb.iter().map(|v| v * v).sum::<f64>();
            if py == 0.0 && pe == 0.0 {
                0.0
            } else if pe == 0.0 {
                ERLE_CAP_DB
            } else {
                (10.0 * (py / pe).log10()).min(ERLE_CAP_DB)
            }
        })
        .collect())
}

/// `20·log10(‖h - ĥ‖ / ‖h‖)` over the first `taps` coefficients, floored.
pub fn misalignment_db(h_true: &[f64], h_est: &[f64], taps: usize) -> Result<f64> {
    let at = |h: &[f64], i: usize| h.get(i).copied().unwrap_or(0.0);
    let norm: f64 = (0..taps).map(|i| at(h_true, i).powi(2)).sum();
    if norm == 0.0 {
        return Err(Error::Config(
            "true impulse response has zero energy".into(),
        ));
    }
    let err: f64 = (0..taps)
        .map(|i| (at(h_true, i) - at(h_est, i)).powi(2))
        .sum();
    if err == 0.0 {
        return Ok(MISALIGNMENT_FLOOR_DB);
    }
    Ok((10.0 * (err / norm).log10()).max(MISALIGNMENT_FLOOR_DB))
}

/// Frames from `change_frame` until the curve first reaches `threshold_db`.
pub fn reconvergence_time(curve: &[f64], change_frame: usize, threshold_db: f64) -> Option<usize> {
    curve
        .iter()
        .enumerate()
        .skip(change_frame)
        .find(|(_, &v)| v <= threshold_db)
        .map(|(k, _)| k - change_frame)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub frames: usize,
    pub hop: usize,
    pub erle_curve: Vec<f64>,
    pub final_erle: f64,
    pub misalignment_curve: Vec<f64>,
    /// Transition factor per frame when the algorithm exposes one.
    pub a_trace: Vec<f64>,
    pub si_sdr_in: f64,
    pub si_sdr_out: f64,
    /// Frame of the first echo-path change, if the scene has one.
    pub change_frame: Option<usize>,
    pub reconvergence_time: Option<usize>,
}

/// Compact view written as the per-run summary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalSummary {
    pub frames: usize,
    pub final_erle: f64,
    pub final_misalignment: f64,
    pub si_sdr_in: f64,
    pub si_sdr_out: f64,
    pub si_sdr_delta: f64,
    pub change_frame: Option<usize>,
    pub reconvergence_time: Option<usize>,
}

impl EvalReport {
    pub fn summary(&self) -> EvalSummary {
        EvalSummary {
            frames: self.frames,
            final_erle: self.final_erle,
            final_misalignment: self.misalignment_curve.last().copied().unwrap_or(0.0),
            si_sdr_in: self.si_sdr_in,
            si_sdr_out: self.si_sdr_out,
            si_sdr_delta: self.si_sdr_out - self.si_sdr_in,
            change_frame: self.change_frame,
            reconvergence_time: self.reconvergence_time,
        }
    }

    /// `frame,erle_db,misalign_db`, plus `a` when a transition factor was traced.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut out = String::from("frame,erle_db,misalign_db");
        let with_a = self.a_trace.len() == self.frames;
        if with_a {
            out.push_str(",a");
        }
        out.push('\n');
        for k in 0..self.frames {
            out.push_str(&format!(
                "{k},{},{}",
                self.erle_curve[k], self.misalignment_curve[k]
            ));
            if with_a {
                out.push_str(&format!(",{}", self.a_trace[k]));
            }
            out.push('\n');
        }
        write_file(path, out.as_bytes())
    }

    pub fn write_summary(&self, path: &Path) -> Result<()> {
        let json = serde_json::to_string_pretty(&self.summary())?;
        write_file(path, json.as_bytes())
    }
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(bytes).map_err(|e| Error::io(path, e))
}

/// Runs `canceller` over a rendered scene and assembles the report.
///
/// ERLE compares the echo with the residual echo `out - (mic - echo)`, which
/// equals the plain mic/output ratio wherever the near-end is silent.
pub fn evaluate(
    scene: &EchoScene,
    rendered: &RenderedScene,
    canceller: &mut dyn Canceller,
) -> Result<EvalReport> {
    let hop = canceller.hop();
    let far = &scene.farend.samples;
    let mic = &rendered.mic.samples;
    let n = mic.len();
    if far.len() != n {
        return Err(Error::Length {
            expected: n,
            actual: far.len(),
        });
    }
    let frames = n.div_ceil(hop);
    let mut out = Vec::with_capacity(frames * hop);
    let mut misalignment_curve = Vec::with_capacity(frames);
    let mut a_trace = Vec::new();
    for (k, (fb, mb)) in crate::filters::blocks(far, mic, hop).enumerate() {
        let block = canceller.process_block(&fb, &mb)?;
        out.extend_from_slice(&block.samples);
        if let Some(a) = block.a {
            a_trace.push(a);
        }
        let h_true = &scene.rir_at(k * hop).taps;
        misalignment_curve.push(misalignment_db(h_true, &canceller.impulse_response(), hop)?);
    }
    out.truncate(n);

    let residual: Vec<f64> = (0..n)
        .map(|i| out[i] - (mic[i] - rendered.echo.samples[i]))
        .collect();
    let erle_curve = erle_curve(&rendered.echo.samples, &residual, hop)?;
    let target = &rendered.nearend.samples;
    let has_target = target.iter().any(|v| *v != 0.0);
    let (si_sdr_in, si_sdr_out) = if has_target {
        (
            si_sdr(target, mic, SI_SDR_CAP_DB)?,
            si_sdr(target, &out, SI_SDR_CAP_DB)?,
        )
    } else {
        (f64::NAN, f64::NAN)
    };
    let change_frame = scene.rir_schedule.get(1).map(|(start, _)| start / hop);
    let reconvergence_time =
        change_frame.and_then(|c| reconvergence_time(&misalignment_curve, c, RECONVERGENCE_DB));
    Ok(EvalReport {
        frames,
        hop,
        final_erle: erle_curve.last().copied().unwrap_or(0.0),
        erle_curve,
        misalignment_curve,
        a_trace,
        si_sdr_in,
        si_sdr_out,
        change_frame,
        reconvergence_time,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn passthrough_is_zero_db() {
        let y: Vec<f64> = (0..320).map(|i| (i as f64 * 0.1).sin()).collect();
        let c = erle_curve(&y, &y, 32).unwrap();
        assert!(c.iter().all(|v| v.abs() < 1e-12));
    }

    #[test]
    fn perfect_cancellation_is_capped() {
        let y = vec![0.5; 64];
        let c = erle_curve(&y, &[0.0; 64], 32).unwrap();
        assert_eq!(c, vec![ERLE_CAP_DB; 2]);
    }

    #[test]
    fn misalignment_limits() {
        let h = [0.5, -0.25, 0.125];
        assert_eq!(misalignment_db(&h, &h, 3).unwrap(), MISALIGNMENT_FLOOR_DB);
        assert!(misalignment_db(&h, &[0.0; 3], 3).unwrap().abs() < 1e-12);
        let half: Vec<f64> = h.iter().map(|v| v * 0.5).collect();
        assert!((misalignment_db(&h, &half, 3).unwrap() + 6.0206).abs() < 1e-3);
        // Shorter estimates are zero padded.
        assert!(misalignment_db(&h, &[0.5], 3).unwrap() < 0.0);
        assert!(misalignment_db(&[0.0; 3], &h, 3).is_err());
    }

    #[test]
    fn reconvergence_counts_from_change() {
        let curve = [-30.0, -30.0, 0.0, -5.0, -16.0, -20.0];
        assert_eq!(reconvergence_time(&curve, 2, -15.0), Some(2));
        assert_eq!(reconvergence_time(&curve[..4], 2, -15.0), None);
    }
}
