//! Desk-scale signal generators standing in for speech corpora.

use std::f64::consts::PI;
use std::path::PathBuf;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::wav;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum SourceSpec {
    Silence,
    /// Gaussian white noise with the given RMS.
    White {
        rms: f64,
    },
    /// AR(2) resonator driven by white noise: a crude voiced-speech stand-in.
    Ar2 {
        rms: f64,
        pole_radius: f64,
        center_hz: f64,
    },
    /// Band-limited noise gated on and off.
    Bursts {
        rms: f64,
        on_s: f64,
        off_s: f64,
        low_hz: f64,
        high_hz: f64,
    },
    /// 16-bit PCM mono 16 kHz file; trimmed or zero-padded to the scene length.
    Wav {
        path: PathBuf,
    },
}

impl SourceSpec {
    pub fn generate<R: Rng>(&self, len: usize, fs: u32, rng: &mut R) -> Result<Vec<f64>> {
        let fsf = fs as f64;
        let out = match self {
            SourceSpec::Silence => vec![0.0; len],
            SourceSpec::White { rms } => {
                let mut v = gaussian(len, rng);
                normalize_rms(&mut v, *rms);
                v
            }
            SourceSpec::Ar2 {
                rms,
                pole_radius,
                center_hz,
            } => {
                if !(0.0..1.0).contains(pole_radius) {
                    return Err(Error::Scene("AR(2) pole radius must lie in [0, 1)".into()));
                }
                let theta = 2.0 * PI * center_hz / fsf;
                let a1 = 2.0 * pole_radius * theta.cos();
                let a2 = -pole_radius * pole_radius;
                let drive = gaussian(len, rng);
                let mut v = vec![0.0; len];
                for n in 0..len {
                    let y1 = if n >= 1 { v[n - 1] } else { 0.0 };
                    let y2 = if n >= 2 { v[n - 2] } else { 0.0 };
                    v[n] = drive[n] + a1 * y1 + a2 * y2;
                }
                normalize_rms(&mut v, *rms);
                v
            }
            SourceSpec::Bursts {
                rms,
                on_s,
                off_s,
                low_hz,
                high_hz,
            } => {
                if !(*low_hz > 0.0 && high_hz > low_hz && *high_hz < fsf / 2.0) {
                    return Err(Error::Scene(
                        "burst band must satisfy 0 < low < high < fs/2".into(),
                    ));
                }
                let mut v = bandpass(&gaussian(len, rng), *low_hz, *high_hz, fsf);
                let on = (on_s * fsf).round().max(1.0) as usize;
                let off = (off_s * fsf).round() as usize;
                let ramp = ((0.005 * fsf) as usize).clamp(1, on / 2 + 1);
                for (n, s) in v.iter_mut().enumerate() {
                    let pos = n % (on + off);
                    let gate = if pos >= on {
                        0.0
                    } else {
                        let edge = pos.min(on - 1 - pos);
                        (edge as f64 / ramp as f64).min(1.0)
                    };
                    *s *= gate;
                }
                normalize_rms(&mut v, *rms);
                v
            }
            SourceSpec::Wav { path } => {
                let sig = wav::read_wav(path)?;
                if sig.sample_rate != fs {
                    return Err(Error::Scene(format!(
                        "{} has sample rate {}, scene expects {fs}",
                        path.display(),
                        sig.sample_rate
                    )));
                }
                let mut v = sig.samples;
                v.resize(len, 0.0);
                v
            }
        };
        Ok(out)
    }

    pub(crate) fn resolve_paths(&mut self, base: &std::path::Path) {
        if let SourceSpec::Wav { path } = self {
            if path.is_relative() {
                *path = base.join(&*path);
            }
        }
    }
}

fn gaussian<R: Rng>(len: usize, rng: &mut R) -> Vec<f64> {
    (0..len).map(|_| rng.sample(StandardNormal)).collect()
}

fn normalize_rms(v: &mut [f64], rms: f64) {
    let cur = (v.iter().map(|x| x * x).sum::<f64>() / v.len().max(1) as f64).sqrt();
    if cur > 0.0 {
        let g = rms / cur;
        v.iter_mut().for_each(|x| *x *= g);
    }
}

/// RBJ constant-peak band-pass biquad between `low` and `high`.
fn bandpass(x: &[f64], low: f64, high: f64, fs: f64) -> Vec<f64> {
    let center = (low * high).sqrt();
    let q = center / (high - low);
    let w0 = 2.0 * PI * center / fs;
    let alpha = w0.sin() / (2.0 * q);
    let a0 = 1.0 + alpha;
    let (b0, b2) = (alpha / a0, -alpha / a0);
    let (a1, a2) = (-2.0 * w0.cos() / a0, (1.0 - alpha) / a0);
    let (mut x1, mut x2, mut y1, mut y2) = (0.0, 0.0, 0.0, 0.0);
    x.iter()
        .map(|&v| {
            let y = b0 * v + b2 * x2 - a1 * y1 - a2 * y2;
            x2 = x1;
            x1 = v;
            y2 = y1;
            y1 = y;
            y
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn rms(v: &[f64]) -> f64 {
        (v.iter().map(|x| x * x).sum::<f64>() / v.len() as f64).sqrt()
    }

    #[test]
    fn generators_hit_target_rms() {
        let specs = [
            SourceSpec::White { rms: 0.1 },
            SourceSpec::Ar2 {
                rms: 0.2,
                pole_radius: 0.95,
                center_hz: 500.0,
            },
            SourceSpec::Bursts {
                rms: 0.05,
                on_s: 0.3,
                off_s: 0.2,
                low_hz: 300.0,
                high_hz: 3000.0,
            },
        ];
        for s in &specs {
            let mut rng = ChaCha8Rng::seed_from_u64(9);
            let v = s.generate(16_000, 16_000, &mut rng).unwrap();
            let target = match s {
                SourceSpec::White { rms }
                | SourceSpec::Ar2 { rms, .. }
                | SourceSpec::Bursts { rms, .. } => *rms,
                _ => unreachable!(),
            };
            assert!((rms(&v) - target).abs() < 1e-12);
        }
    }

    #[test]
    fn bursts_are_silent_when_off() {
        let s = SourceSpec::Bursts {
            rms: 0.1,
            on_s: 0.1,
            off_s: 0.1,
            low_hz: 200.0,
            high_hz: 2000.0,
        };
        let v = s
            .generate(6400, 16_000, &mut ChaCha8Rng::seed_from_u64(1))
            .unwrap();
        assert!(v[1600..3200].iter().all(|&x| x == 0.0));
        assert!(v[..1600].iter().any(|&x| x != 0.0));
    }

    #[test]
    fn invalid_parameters_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let bad = SourceSpec::Ar2 {
            rms: 0.1,
            pole_radius: 1.2,
            center_hz: 100.0,
        };
        assert!(bad.generate(10, 16_000, &mut rng).is_err());
    }
}
