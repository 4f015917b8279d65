use serde::{Deserialize, Serialize};

use crate::autodiff::Backend;
use crate::error::{Error, Result};

/// Guard added to both energies of the SI-SDR ratio.
pub const SI_SDR_EPS: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossConfig {
    /// Weight of the spectral magnitude term.
    pub alpha: f64,
    /// Upper limit on SI-SDR in dB.
    pub si_sdr_cap: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            alpha: 10_000.0,
            si_sdr_cap: 30.0,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return Err(Error::Config(format!(
                "loss alpha must be > 0, got {}",
                self.alpha
            )));
        }
        if !(self.si_sdr_cap > 0.0) {
            return Err(Error::Config("si_sdr_cap must be > 0".into()));
        }
        Ok(())
    }
}

fn zero_mean(x: &[f64]) -> Vec<f64> {
    let m = x.iter().sum::<f64>() / x.len() as f64;
    x.iter().map(|v| v - m).collect()
}

fn check_target(target: &[f64], est_len: usize) -> Result<Vec<f64>> {
    if target.is_empty() || target.len() != est_len {
        return Err(Error::Length {
            expected: target.len().max(1),
            actual: est_len,
        });
    }
    let s = zero_mean(target);
    if s.iter().map(|v| v * v).sum::<f64>() == 0.0 {
        return Err(Error::Loss("SI-SDR target has zero energy".into()));
    }
    Ok(s)
}

/// Scale-invariant SDR in dB after removing the means, capped at `cap`.
pub fn si_sdr(target: &[f64], estimate: &[f64], cap: f64) -> Result<f64> {
    let s = check_target(target, estimate.len())?;
    let e = zero_mean(estimate);
    let ss: f64 = s.iter().map(|v| v * v).sum();
    let alpha = e.iter().zip(&s).map(|(a, b)| a * b).sum::<f64>() / ss;
    let num: f64 = s.iter().map(|v| (alpha * v).powi(2)).sum();
    let den: f64 = s.iter().zip(&e).map(|(a, b)| (alpha * a - b).powi(2)).sum();
    Ok((10.0 * ((num + SI_SDR_EPS) / (den + SI_SDR_EPS)).log10()).min(cap))
}

/// Differentiable [`si_sdr`] with a constant target.
pub fn si_sdr_var<B: Backend>(
    b: &mut B,
    target: &[f64],
    estimate: &B::T,
    cap: f64,
) -> Result<B::T> {
    let s = check_target(target, b.len(estimate))?;
    let ss: f64 = s.iter().map(|v| v * v).sum();
    let sc = b.constant(s);
    let mean = b.mean(estimate);
    let neg_mean = b.neg(&mean);
    let e = b.add_scalar(estimate, &neg_mean);
    let dot = b.dot(&e, &sc);
    let alpha = b.scale(&dot, 1.0 / ss);
    let proj = b.mul_scalar(&sc, &alpha);
    let resid = b.sub(&proj, &e);
    let p2 = b.square(&proj);
    let num = b.sum(&p2);
    let num = b.offset(&num, SI_SDR_EPS);
    let r2 = b.square(&resid);
    let den = b.sum(&r2);
    let den = b.offset(&den, SI_SDR_EPS);
    let ratio = b.div(&num, &den);
    let l = b.log(&ratio);
    let db = b.scale(&l, 10.0 / std::f64::consts::LN_10);
    let capped = b.scalar(&db) > cap;
    b.note_branch(capped);
    if capped {
        return Ok(b.constant(vec![cap]));
    }
    Ok(db)
}

/// The two loss terms and their combination.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LossTerms {
    pub si_sdr: f64,
    pub mae: f64,
    pub total: f64,
}

/// `-SI-SDR(s, ŝ) + α·mean|(|S| - |Ŝ|)|` with magnitudes given directly.
pub fn loss_terms(
    target: &[f64],
    estimate: &[f64],
    target_mag: &[f64],
    estimate_mag: &[f64],
    cfg: &LossConfig,
) -> Result<LossTerms> {
    if target_mag.len() != estimate_mag.len() || target_mag.is_empty() {
        return Err(Error::Length {
            expected: target_mag.len(),
            actual: estimate_mag.len(),
        });
    }
    let sdr = si_sdr(target, estimate, cfg.si_sdr_cap)?;
    let mae = target_mag
        .iter()
        .zip(estimate_mag)
        .map(|(a, b)| (a - b).abs())
        .sum::<f64>()
        / target_mag.len() as f64;
    Ok(LossTerms {
        si_sdr: sdr,
        mae,
        total: -sdr + cfg.alpha * mae,
    })
}

/// Differentiable loss. `estimate_spec` is a split complex vector holding
/// every estimated frame; `target_mag` holds the matching magnitudes.
pub fn loss_var<B: Backend>(
    b: &mut B,
    target: &[f64],
    estimate: &B::T,
    target_mag: &[f64],
    estimate_spec: &B::T,
    cfg: &LossConfig,
) -> Result<B::T> {
    if 2 * target_mag.len() != b.len(estimate_spec) || target_mag.is_empty() {
        return Err(Error::Length {
            expected: 2 * target_mag.len(),
            actual: b.len(estimate_spec),
        });
    }
    let sdr = si_sdr_var(b, target, estimate, cfg.si_sdr_cap)?;
    let mag = b.cabs(estimate_spec);
    let tm = b.constant(target_mag.to_vec());
    let diff = b.sub(&mag, &tm);
    let ad = b.abs(&diff);
    let mae = b.mean(&ad);
    let weighted = b.scale(&mae, cfg.alpha);
    Ok(b.sub(&weighted, &sdr))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Eval;

    #[test]
    fn exact_match_hits_cap() {
        let s = [0.1, -0.4, 0.3, 0.9, -0.2];
        assert_eq!(si_sdr(&s, &s, 30.0).unwrap(), 30.0);
        let scaled: Vec<f64> = s.iter().map(|v| -2.5 * v).collect();
        assert_eq!(si_sdr(&s, &scaled, 30.0).unwrap(), 30.0);
    }

    #[test]
    fn zero_target_rejected() {
        assert!(si_sdr(&[0.0; 4], &[1.0, 0.0, 0.0, 0.0], 30.0).is_err());
        assert!(si_sdr(&[1.0; 4], &[1.0, 0.0, 0.0, 0.0], 30.0).is_err());
    }

    #[test]
    fn plain_and_backend_versions_agree() {
        let s = [0.3, -0.1, 0.5, 0.2, -0.7, 0.1];
        let e = [0.2, 0.0, 0.4, 0.4, -0.5, 0.3];
        let plain = si_sdr(&s, &e, 30.0).unwrap();
        let mut b = Eval::new();
        let ev = b.constant(e.to_vec());
        let v = si_sdr_var(&mut b, &s, &ev, 30.0).unwrap();
        assert!((plain - b.scalar(&v)).abs() < 1e-12);
    }
}
