use std::collections::HashMap;
use std::rc::Rc;

use super::kernels::{self as k, Conv1dShape};
use super::Backend;
use crate::signal::FftPlan;

/// Value-only backend for inference and finite differences.
///
/// It also folds the active side of every non-smooth operation (ReLU, abs,
/// magnitude at zero, explicit branches) into a signature, so a finite
/// difference can tell whether its stencil crossed a kink.
#[derive(Debug, Default)]
pub struct Eval {
    plans: HashMap<usize, FftPlan>,
    signature: u64,
}

type V = Rc<Vec<f64>>;

impl Eval {
    pub fn new() -> Self {
        Self::default()
    }

    /// Hash of the active pieces of all non-smooth operations so far.
    pub fn signature(&self) -> u64 {
        self.signature
    }

    fn fold(&mut self, bits: impl Iterator<Item = bool>) {
        let mut h = self.signature;
        for b in bits {
            h = (h ^ (b as u64 + 1)).wrapping_mul(0x0000_0100_0000_01B3);
        }
        self.signature = h;
    }

    fn plan(&mut self, n: usize) -> &FftPlan {
        self.plans
            .entry(n)
            .or_insert_with(|| FftPlan::new(n).expect("non-zero transform size"))
    }
}

impl Backend for Eval {
    type T = V;

    fn constant(&mut self, data: Vec<f64>) -> V {
        Rc::new(data)
    }

    fn param(&mut self, data: Vec<f64>) -> V {
        Rc::new(data)
    }

    fn value<'a>(&'a self, t: &'a V) -> &'a [f64] {
        t
    }

    fn note_branch(&mut self, taken: bool) {
        self.fold(std::iter::once(taken));
    }

    fn stop_gradient(&mut self, a: &V) -> V {
        a.clone()
    }

    fn add(&mut self, a: &V, b: &V) -> V {
        Rc::new(k::zip(a, b, |x, y| x + y))
    }

    fn sub(&mut self, a: &V, b: &V) -> V {
        Rc::new(k::zip(a, b, |x, y| x - y))
    }

    fn mul(&mut self, a: &V, b: &V) -> V {
        Rc::new(k::zip(a, b, |x, y| x * y))
    }

    fn div(&mut self, a: &V, b: &V) -> V {
        Rc::new(k::zip(a, b, |x, y| x / y))
    }

    fn neg(&mut self, a: &V) -> V {
        Rc::new(k::map(a, |x| -x))
    }

    fn scale(&mut self, a: &V, c: f64) -> V {
        Rc::new(k::map(a, |x| c * x))
    }

    fn offset(&mut self, a: &V, c: f64) -> V {
        Rc::new(k::map(a, |x| x + c))
    }

    fn mul_scalar(&mut self, a: &V, s: &V) -> V {
        let sv = s[0];
        Rc::new(k::map(a, |x| x * sv))
    }

    fn add_scalar(&mut self, a: &V, s: &V) -> V {
        let sv = s[0];
        Rc::new(k::map(a, |x| x + sv))
    }

    fn mul_const(&mut self, a: &V, c: Rc<[f64]>) -> V {
        Rc::new(k::zip(a, &c, |x, y| x * y))
    }

    fn exp(&mut self, a: &V) -> V {
        Rc::new(k::map(a, f64::exp))
    }

    fn log(&mut self, a: &V) -> V {
        Rc::new(k::map(a, f64::ln))
    }

    fn tanh(&mut self, a: &V) -> V {
        Rc::new(k::map(a, f64::tanh))
    }

    fn sigmoid(&mut self, a: &V) -> V {
        Rc::new(k::map(a, k::sigmoid))
    }

    fn relu(&mut self, a: &V) -> V {
        self.fold(a.iter().map(|&x| x > 0.0));
        Rc::new(k::map(a, |x| x.max(0.0)))
    }

    fn softplus(&mut self, a: &V) -> V {
        Rc::new(k::map(a, k::softplus))
    }

    fn sqrt(&mut self, a: &V) -> V {
        Rc::new(k::map(a, f64::sqrt))
    }

    fn abs(&mut self, a: &V) -> V {
        self.fold(a.iter().map(|&x| x > 0.0));
        self.fold(a.iter().map(|&x| x < 0.0));
        Rc::new(k::map(a, f64::abs))
    }

    fn square(&mut self, a: &V) -> V {
        Rc::new(k::map(a, |x| x * x))
    }

    fn matvec(&mut self, w: &V, x: &V, rows: usize, cols: usize) -> V {
        Rc::new(k::matvec(w, x, rows, cols))
    }

    fn sum(&mut self, a: &V) -> V {
        Rc::new(vec![a.iter().sum()])
    }

    fn mean(&mut self, a: &V) -> V {
        Rc::new(vec![a.iter().sum::<f64>() / a.len() as f64])
    }

    fn cmul(&mut self, a: &V, b: &V) -> V {
        Rc::new(k::cmul(a, b))
    }

    fn cabs(&mut self, a: &V) -> V {
        let out = k::cabs(a);
        self.fold(out.iter().map(|&m| m > 0.0));
        Rc::new(out)
    }

    fn fft(&mut self, a: &V) -> V {
        let n = a.len() / 2;
        Rc::new(k::fft(self.plan(n), a))
    }

    fn ifft(&mut self, a: &V) -> V {
        let n = a.len() / 2;
        Rc::new(k::ifft(self.plan(n), a))
    }

    fn gather(&mut self, a: &V, idx: Rc<[usize]>, w: Rc<[f64]>) -> V {
        Rc::new(k::gather(a, &idx, &w))
    }

    fn slice(&mut self, a: &V, start: usize, len: usize) -> V {
        Rc::new(a[start..start + len].to_vec())
    }

    fn concat(&mut self, parts: &[V]) -> V {
        Rc::new(parts.iter().flat_map(|p| p.iter().copied()).collect())
    }

    fn conv1d(&mut self, x: &V, w: &V, b: &V, shape: Conv1dShape) -> V {
        Rc::new(k::conv1d(x, w, b, shape))
    }
}
