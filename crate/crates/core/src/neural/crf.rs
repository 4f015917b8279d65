//! Complex ratio filtering over a causal time-frequency neighbourhood.
//!
//! Tap `t = τ_idx·F_c + φ_idx` pairs frame `k - (T_c - 1 - τ_idx)` with bin
//! offset `φ_idx - (F_c - 1)/2`. Coefficients and gathered references use
//! the split layout with element `(t, f)` at `t·F + f`.

use std::rc::Rc;

use num_complex::Complex64;

use super::ModelConfig;
use crate::autodiff::Backend;

/// Gathers the reference neighbourhood for the newest frame in `history`
/// (oldest first). Missing frames and out-of-range bins are zero.
pub fn gather_reference(cfg: &ModelConfig, history: &[&[Complex64]]) -> Vec<f64> {
    let (tc, fc, nb) = (cfg.crf_time_taps, cfg.crf_freq_taps, cfg.n_bins);
    let taps = tc * fc;
    let half = (fc - 1) / 2;
    let mut out = vec![0.0; 2 * taps * nb];
    for ti in 0..tc {
        let back = tc - 1 - ti;
        if back >= history.len() {
            continue;
        }
        let frame = history[history.len() - 1 - back];
        for fi in 0..fc {
            let t = ti * fc + fi;
            for f in 0..nb {
                let src = f as isize + fi as isize - half as isize;
                if src >= 0 && (src as usize) < nb {
                    let v = frame[src as usize];
                    out[t * nb + f] = v.re;
                    out[taps * nb + t * nb + f] = v.im;
                }
            }
        }
    }
    out
}

/// `X̂[f] = Σ_t crf[t, f] · ref[t, f]`; returns a one-sided split spectrum.
pub fn apply_crf<B: Backend>(
    b: &mut B,
    crf: &B::T,
    reference: Vec<f64>,
    taps: usize,
    bins: usize,
) -> B::T {
    let r = b.constant(reference);
    let prod = b.cmul(crf, &r);
    let tf = taps * bins;
    let mut re = b.slice(&prod, 0, bins);
    let mut im = b.slice(&prod, tf, bins);
    for t in 1..taps {
        let pr = b.slice(&prod, t * bins, bins);
        let pi = b.slice(&prod, tf + t * bins, bins);
        re = b.add(&re, &pr);
        im = b.add(&im, &pi);
    }
    b.complex(&re, &im)
}

/// Gather pattern expanding a one-sided split spectrum (`2F`) to a full
/// conjugate-symmetric split spectrum (`2M`). Imaginary parts at DC and
/// Nyquist are dropped.
pub fn expand_complex(m: usize) -> (Rc<[usize]>, Rc<[f64]>) {
    let f = m / 2 + 1;
    let src = |j: usize| if j <= m / 2 { j } else { m - j };
    let mut idx = Vec::with_capacity(2 * m);
    let mut w = Vec::with_capacity(2 * m);
    for j in 0..m {
        idx.push(src(j));
        w.push(1.0);
    }
    for j in 0..m {
        idx.push(f + src(j));
        w.push(if j == 0 || j == m / 2 {
            0.0
        } else if j < m / 2 {
            1.0
        } else {
            -1.0
        });
    }
    (idx.into(), w.into())
}

/// Gather pattern expanding a one-sided real vector (`F`) to `M` bins.
pub fn expand_real(m: usize) -> (Rc<[usize]>, Rc<[f64]>) {
    let idx: Vec<usize> = (0..m).map(|j| if j <= m / 2 { j } else { m - j }).collect();
    (idx.into(), vec![1.0; m].into())
}

/// Gather pattern taking the one-sided half (`2F`) of a full split spectrum.
pub fn one_sided(m: usize) -> (Rc<[usize]>, Rc<[f64]>) {
    let f = m / 2 + 1;
    let idx: Vec<usize> = (0..f).chain(m..m + f).collect();
    (idx.into(), vec![1.0; 2 * f].into())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Eval;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn cfg() -> ModelConfig {
        ModelConfig::desk()
    }

    fn rand_c(rng: &mut ChaCha8Rng) -> Complex64 {
        Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    #[test]
    fn matches_direct_double_sum() {
        let c = cfg();
        let (nb, tc, fc) = (c.n_bins, c.crf_time_taps, c.crf_freq_taps);
        let taps = tc * fc;
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let frames: Vec<Vec<Complex64>> = (0..5)
            .map(|_| (0..nb).map(|_| rand_c(&mut rng)).collect())
            .collect();
        // coef[f][τ_idx][φ_idx]
        let coef: Vec<Vec<Vec<Complex64>>> = (0..nb)
            .map(|_| {
                (0..tc)
                    .map(|_| (0..fc).map(|_| rand_c(&mut rng)).collect())
                    .collect()
            })
            .collect();
        let mut crf = vec![0.0; 2 * taps * nb];
        for f in 0..nb {
            for ti in 0..tc {
                for fi in 0..fc {
                    let t = ti * fc + fi;
                    crf[t * nb + f] = coef[f][ti][fi].re;
                    crf[taps * nb + t * nb + f] = coef[f][ti][fi].im;
                }
            }
        }
        let k = 4;
        let hist: Vec<&[Complex64]> = frames[..=k].iter().map(|v| v.as_slice()).collect();
        let mut b = Eval::new();
        let cv = b.constant(crf);
        let out = apply_crf(&mut b, &cv, gather_reference(&c, &hist), taps, nb);
        for f in 0..nb {
            let mut direct = Complex64::new(0.0, 0.0);
            for ti in 0..tc {
                let tau = ti as isize - (tc as isize - 1);
                for fi in 0..fc {
                    let phi = fi as isize - (fc as isize - 1) / 2;
                    let src = f as isize + phi;
                    if src < 0 || src >= nb as isize {
                        continue;
                    }
                    direct += coef[f][ti][fi] * frames[(k as isize + tau) as usize][src as usize];
                }
            }
            assert!((out[f] - direct.re).abs() < 1e-12);
            assert!((out[nb + f] - direct.im).abs() < 1e-12);
        }
    }

    #[test]
    fn identity_and_zero_filters() {
        let c = cfg();
        let (nb, taps) = (c.n_bins, c.crf_taps());
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let frames: Vec<Vec<Complex64>> = (0..3)
            .map(|_| (0..nb).map(|_| rand_c(&mut rng)).collect())
            .collect();
        let hist: Vec<&[Complex64]> = frames.iter().map(|v| v.as_slice()).collect();
        let id = super::super::weights::crf_identity_channel(&c);
        let mut crf = vec![0.0; 2 * taps * nb];
        crf[id * nb..(id + 1) * nb]
            .iter_mut()
            .for_each(|v| *v = 1.0);
        let mut b = Eval::new();
        let cv = b.constant(crf);
        let out = apply_crf(&mut b, &cv, gather_reference(&c, &hist), taps, nb);
        for f in 0..nb {
            assert_eq!(out[f], frames[2][f].re);
            assert_eq!(out[nb + f], frames[2][f].im);
        }
        let zv = b.constant(vec![0.0; 2 * taps * nb]);
        let zero = apply_crf(&mut b, &zv, gather_reference(&c, &hist), taps, nb);
        assert!(zero.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn expansion_is_conjugate_symmetric() {
        let m = 8;
        let f = m / 2 + 1;
        let half: Vec<f64> = (0..2 * f).map(|i| i as f64 + 1.0).collect();
        let (idx, w) = expand_complex(m);
        let mut b = Eval::new();
        let hv = b.constant(half);
        let full = b.gather(&hv, idx, w);
        for j in 1..m {
            assert_eq!(full[j], full[m - j]);
            assert_eq!(full[m + j], -full[m + (m - j)]);
        }
        assert_eq!(full[m], 0.0);
        assert_eq!(full[m + m / 2], 0.0);
        let (idx, w) = one_sided(m);
        let back = b.gather(&full, idx, w);
        assert_eq!(
            &back[..f],
            &(1..=f).map(|v| v as f64).collect::<Vec<_>>()[..]
        );
    }
}
