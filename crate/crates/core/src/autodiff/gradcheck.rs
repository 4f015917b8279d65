use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{Backend, Eval, Tape};
use crate::error::{Error, Result};

/// A scalar function of named parameter tensors, generic over the backend.
pub trait Objective {
    fn eval<B: Backend>(&self, b: &mut B, params: &[B::T]) -> Result<B::T>;
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckEntry {
    pub param: String,
    pub index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub rel_err: f64,
    /// Step the numeric estimate was taken with.
    pub step: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct GradCheckReport {
    pub entries: Vec<GradCheckEntry>,
    pub max_rel_err: f64,
    /// Probes dropped because every usable step crossed a non-smooth point.
    pub non_smooth: usize,
}

impl GradCheckReport {
    pub fn worst(&self) -> Option<&GradCheckEntry> {
        self.entries
            .iter()
            .max_by(|a, b| a.rel_err.total_cmp(&b.rel_err))
    }
}

/// Finite-difference formula.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Stencil {
    /// `(f(x+h) - f(x-h)) / 2h`.
    #[default]
    Central,
    /// Five-point formula, error `O(h⁴)`.
    FivePoint,
    /// Ridders' extrapolation of central differences from step `h` down by
    /// factors of 1.4, keeping the estimate with the smallest error.
    Ridders,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdOptions {
    pub step: f64,
    /// Lower bound of the relative-error denominator.
    pub floor: f64,
    pub stencil: Stencil,
}

/// `|a - n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

fn eval_plain<O: Objective>(obj: &O, params: &[(String, Vec<f64>)]) -> Result<(f64, u64)> {
    let mut b = Eval::new();
    let vars: Vec<_> = params.iter().map(|(_, v)| b.param(v.clone())).collect();
    let out = obj.eval(&mut b, &vars)?;
    if b.len(&out) != 1 {
        return Err(Error::Autodiff("objective must return a scalar".into()));
    }
    Ok((b.scalar(&out), b.signature()))
}

/// Evaluates the objective with one coordinate shifted. Returns `None`
/// when the shift lands on a different piece of a non-smooth operation.
struct Shifter<'a, O> {
    obj: &'a O,
    work: Vec<(String, Vec<f64>)>,
    base: u64,
}

impl<O: Objective> Shifter<'_, O> {
    fn at(&mut self, p: usize, index: usize, d: f64) -> Result<Option<f64>> {
        let orig = self.work[p].1[index];
        self.work[p].1[index] = orig + d;
        let r = eval_plain(self.obj, &self.work);
        self.work[p].1[index] = orig;
        let (v, sig) = r?;
        Ok((sig == self.base).then_some(v))
    }

    fn central(&mut self, p: usize, i: usize, h: f64) -> Result<Option<f64>> {
        Ok(match (self.at(p, i, h)?, self.at(p, i, -h)?) {
            (Some(u), Some(d)) => Some((u - d) / (2.0 * h)),
            _ => None,
        })
    }

    fn five_point(&mut self, p: usize, i: usize, h: f64) -> Result<Option<f64>> {
        let Some(c1) = self.central(p, i, h)? else {
            return Ok(None);
        };
        let Some(c2) = self.central(p, i, 2.0 * h)? else {
            return Ok(None);
        };
        Ok(Some((4.0 * c1 - c2) / 3.0))
    }

    fn ridders(&mut self, p: usize, i: usize, h: f64) -> Result<Option<f64>> {
        const CON: f64 = 1.4;
        const NTAB: usize = 10;
        const SAFE: f64 = 2.0;
        let con2 = CON * CON;
        let Some(first) = self.central(p, i, h)? else {
            return Ok(None);
        };
        let mut table = vec![vec![0.0; NTAB]; NTAB];
        table[0][0] = first;
        let mut best = first;
        let mut err = f64::INFINITY;
        let mut hh = h;
        for col in 1..NTAB {
            hh /= CON;
            let Some(c) = self.central(p, i, hh)? else {
                break;
            };
            table[0][col] = c;
            let mut fac = con2;
            for row in 1..=col {
                table[row][col] =
                    (table[row - 1][col] * fac - table[row - 1][col - 1]) / (fac - 1.0);
                fac *= con2;
                let e = (table[row][col] - table[row - 1][col])
                    .abs()
                    .max((table[row][col] - table[row - 1][col - 1]).abs());
                if e <= err {
                    err = e;
                    best = table[row][col];
                }
            }
            if (table[col][col] - table[col - 1][col - 1]).abs() >= SAFE * err {
                break;
            }
        }
        Ok(Some(best))
    }

    /// Numeric derivative at the largest step `<= h` (halving) whose
    /// stencil stays on the base piece.
    fn derivative(&mut self, p: usize, i: usize, opts: &FdOptions) -> Result<Option<(f64, f64)>> {
        let mut h = opts.step;
        for _ in 0..12 {
            let r = match opts.stencil {
                Stencil::Central => self.central(p, i, h)?,
                Stencil::FivePoint => self.five_point(p, i, h)?,
                Stencil::Ridders => self.ridders(p, i, h)?,
            };
            if let Some(n) = r {
                return Ok(Some((n, h)));
            }
            h /= 2.0;
        }
        Ok(None)
    }
}

/// Compares tape gradients with central differences of step `h` at up to
/// `probes_per_param` evenly spaced coordinates of every parameter.
pub fn grad_check<O: Objective>(
    obj: &O,
    params: &[(String, Vec<f64>)],
    probes_per_param: usize,
    h: f64,
    floor: f64,
) -> Result<GradCheckReport> {
    let mut probes = Vec::new();
    for (p, (_, v)) in params.iter().enumerate() {
        let n = v.len();
        let count = probes_per_param.min(n);
        probes.extend((0..count).map(|j| (p, if count == n { j } else { j * n / count })));
    }
    let opts = FdOptions {
        step: h,
        floor,
        stencil: Stencil::Central,
    };
    let len = probes.len();
    grad_check_at(obj, params, probes, len, &opts)
}

/// Coordinates drawn uniformly over all parameter elements.
pub fn random_probes(
    params: &[(String, Vec<f64>)],
    seed: u64,
) -> impl Iterator<Item = (usize, usize)> + '_ {
    let total: usize = params.iter().map(|(_, v)| v.len()).sum();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    std::iter::from_fn(move || {
        if total == 0 {
            return None;
        }
        let mut k = rng.random_range(0..total);
        let mut p = 0;
        while k >= params[p].1.len() {
            k -= params[p].1.len();
            p += 1;
        }
        Some((p, k))
    })
}

/// Checks probes in order until `count` of them had a smooth neighbourhood.
/// At most `4 * count` probes are tried.
pub fn grad_check_at<O: Objective>(
    obj: &O,
    params: &[(String, Vec<f64>)],
    probes: impl IntoIterator<Item = (usize, usize)>,
    count: usize,
    opts: &FdOptions,
) -> Result<GradCheckReport> {
    let mut tape = Tape::new();
    let vars: Vec<_> = params.iter().map(|(_, v)| tape.param(v.clone())).collect();
    let loss = obj.eval(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let (_, base) = eval_plain(obj, params)?;
    let mut shifter = Shifter {
        obj,
        work: params.to_vec(),
        base,
    };
    let mut entries = Vec::with_capacity(count);
    let mut non_smooth = 0;
    for (p, index) in probes.into_iter().take(4 * count) {
        if entries.len() == count {
            break;
        }
        let g = grads.get_ref(vars[p]).map_or(0.0, |g| g[index]);
        match shifter.derivative(p, index, opts)? {
            Some((numeric, step)) => entries.push(GradCheckEntry {
                param: params[p].0.clone(),
                index,
                analytic: g,
                numeric,
                rel_err: relative_error(g, numeric, opts.floor),
                step,
            }),
            None => non_smooth += 1,
        }
    }
    let max_rel_err = entries.iter().map(|e| e.rel_err).fold(0.0, f64::max);
    Ok(GradCheckReport {
        entries,
        max_rel_err,
        non_smooth,
    })
}
