//! Reverse-mode automatic differentiation over flat `f64` vectors.
//!
//! Model code is written once against [`Backend`]. [`Eval`] computes values
//! only; [`Tape`] records every operation so [`Tape::backward`] can return
//! exact gradients. Complex vectors use the split layout `[re; im]`.

mod eval;
mod gradcheck;
pub mod kernels;
mod selfcheck;
mod tape;

use std::rc::Rc;

pub use eval::Eval;
pub use gradcheck::{
    grad_check, grad_check_at, random_probes, relative_error, FdOptions, GradCheckEntry,
    GradCheckReport, Objective, Stencil,
};
pub use kernels::Conv1dShape;
pub use selfcheck::{primitive_grad_checks, Prim, PrimObjective, PrimitiveCheck, PRIM_OPERAND_LEN};
pub use tape::{Gradients, Tape, Var};

/// Operations available to differentiable model code.
pub trait Backend {
    type T: Clone;

    /// Data that never receives a gradient.
    fn constant(&mut self, data: Vec<f64>) -> Self::T;
    /// Trainable leaf.
    fn param(&mut self, data: Vec<f64>) -> Self::T;
    fn value<'a>(&'a self, t: &'a Self::T) -> &'a [f64];
    /// Identity in the forward pass, zero gradient in the backward pass.
    fn stop_gradient(&mut self, a: &Self::T) -> Self::T;

    fn add(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn sub(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn mul(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn div(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    fn neg(&mut self, a: &Self::T) -> Self::T;
    fn scale(&mut self, a: &Self::T, c: f64) -> Self::T;
    fn offset(&mut self, a: &Self::T, c: f64) -> Self::T;
    /// `a * s[0]` for a length-one `s`.
    fn mul_scalar(&mut self, a: &Self::T, s: &Self::T) -> Self::T;
    /// `a + s[0]` for a length-one `s`.
    fn add_scalar(&mut self, a: &Self::T, s: &Self::T) -> Self::T;
    /// Elementwise product with fixed data.
    fn mul_const(&mut self, a: &Self::T, c: Rc<[f64]>) -> Self::T;

    fn exp(&mut self, a: &Self::T) -> Self::T;
    fn log(&mut self, a: &Self::T) -> Self::T;
    fn tanh(&mut self, a: &Self::T) -> Self::T;
    fn sigmoid(&mut self, a: &Self::T) -> Self::T;
    fn relu(&mut self, a: &Self::T) -> Self::T;
    fn softplus(&mut self, a: &Self::T) -> Self::T;
    fn sqrt(&mut self, a: &Self::T) -> Self::T;
    fn abs(&mut self, a: &Self::T) -> Self::T;
    fn square(&mut self, a: &Self::T) -> Self::T;

    /// Row-major `rows x cols` matrix times vector.
    fn matvec(&mut self, w: &Self::T, x: &Self::T, rows: usize, cols: usize) -> Self::T;
    fn sum(&mut self, a: &Self::T) -> Self::T;
    fn mean(&mut self, a: &Self::T) -> Self::T;

    fn cmul(&mut self, a: &Self::T, b: &Self::T) -> Self::T;
    /// Magnitude of each complex element; the gradient at zero is zero.
    fn cabs(&mut self, a: &Self::T) -> Self::T;
    fn fft(&mut self, a: &Self::T) -> Self::T;
    fn ifft(&mut self, a: &Self::T) -> Self::T;

    /// `out[i] = w[i] * a[idx[i]]`.
    fn gather(&mut self, a: &Self::T, idx: Rc<[usize]>, w: Rc<[f64]>) -> Self::T;
    fn slice(&mut self, a: &Self::T, start: usize, len: usize) -> Self::T;
    fn concat(&mut self, parts: &[Self::T]) -> Self::T;
    fn conv1d(&mut self, x: &Self::T, w: &Self::T, b: &Self::T, shape: Conv1dShape) -> Self::T;

    /// Records a data-dependent branch; only backends that track
    /// non-smooth points care.
    fn note_branch(&mut self, _taken: bool) {}

    fn len(&self, t: &Self::T) -> usize {
        self.value(t).len()
    }

    fn scalar(&self, t: &Self::T) -> f64 {
        self.value(t)[0]
    }

    fn linear(
        &mut self,
        w: &Self::T,
        b: &Self::T,
        x: &Self::T,
        rows: usize,
        cols: usize,
    ) -> Self::T {
        let y = self.matvec(w, x, rows, cols);
        self.add(&y, b)
    }

    fn dot(&mut self, a: &Self::T, b: &Self::T) -> Self::T {
        let p = self.mul(a, b);
        self.sum(&p)
    }

    /// Real part of a split complex vector.
    fn re(&mut self, a: &Self::T) -> Self::T {
        let n = self.len(a) / 2;
        self.slice(a, 0, n)
    }

    fn im(&mut self, a: &Self::T) -> Self::T {
        let n = self.len(a) / 2;
        self.slice(a, n, n)
    }

    fn complex(&mut self, re: &Self::T, im: &Self::T) -> Self::T {
        self.concat(&[re.clone(), im.clone()])
    }

    /// `|a|²` per complex element.
    fn cabs2(&mut self, a: &Self::T) -> Self::T {
        let r = self.re(a);
        let i = self.im(a);
        let r2 = self.square(&r);
        let i2 = self.square(&i);
        self.add(&r2, &i2)
    }

    fn conj(&mut self, a: &Self::T) -> Self::T {
        let n = self.len(a) / 2;
        let r = self.re(a);
        let i = self.im(a);
        let ni = self.neg(&i);
        debug_assert_eq!(self.len(&r), n);
        self.complex(&r, &ni)
    }

    /// Complex vector scaled elementwise by a real vector of half its length.
    fn cscale(&mut self, a: &Self::T, s: &Self::T) -> Self::T {
        let s2 = self.concat(&[s.clone(), s.clone()]);
        self.mul(a, &s2)
    }

    /// Time-domain masking of a complex spectrum: `fft(mask ∘ ifft(a))`.
    fn project(&mut self, a: &Self::T, mask: &[f64]) -> Self::T {
        let t = self.ifft(a);
        let m: Rc<[f64]> = mask.iter().chain(mask).copied().collect();
        let tm = self.mul_const(&t, m);
        self.fft(&tm)
    }
}
