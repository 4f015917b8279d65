//! Forward kernels shared by the tape and the plain evaluator, so both see
//! bit-identical values.
//!
//! Complex vectors use a split layout: `[re_0 .. re_{n-1}, im_0 .. im_{n-1}]`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use crate::signal::FftPlan;

pub fn zip(a: &[f64], b: &[f64], f: impl Fn(f64, f64) -> f64) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "elementwise operands differ in length");
    a.iter().zip(b).map(|(&x, &y)| f(x, y)).collect()
}

pub fn map(a: &[f64], f: impl Fn(f64) -> f64) -> Vec<f64> {
    a.iter().map(|&x| f(x)).collect()
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

pub fn matvec(w: &[f64], x: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    assert_eq!(w.len(), rows * cols, "matrix size");
    assert_eq!(x.len(), cols, "matvec input length");
    w.chunks_exact(cols)
        .map(|row| row.iter().zip(x).map(|(a, b)| a * b).sum())
        .collect()
}

pub fn cmul(a: &[f64], b: &[f64]) -> Vec<f64> {
    assert_eq!(a.len(), b.len(), "complex operands differ in length");
    assert!(
        a.len().is_multiple_of(2),
        "complex vector must have even length"
    );
    let n = a.len() / 2;
    let mut out = vec![0.0; 2 * n];
    for i in 0..n {
        let (ar, ai, br, bi) = (a[i], a[n + i], b[i], b[n + i]);
        out[i] = ar * br - ai * bi;
        out[n + i] = ar * bi + ai * br;
    }
    out
}

fn to_complex(a: &[f64]) -> Vec<Complex64> {
    let n = a.len() / 2;
    (0..n).map(|i| Complex64::new(a[i], a[n + i])).collect()
}

fn from_complex(c: &[Complex64]) -> Vec<f64> {
    let n = c.len();
    let mut out = vec![0.0; 2 * n];
    for (i, v) in c.iter().enumerate() {
        out[i] = v.re;
        out[n + i] = v.im;
    }
    out
}

/// Unnormalized forward transform of a split-layout vector.
pub fn fft(plan: &FftPlan, a: &[f64]) -> Vec<f64> {
    let mut c = to_complex(a);
    plan.forward_in_place(&mut c);
    from_complex(&c)
}

/// Inverse transform with `1/n`.
pub fn ifft(plan: &FftPlan, a: &[f64]) -> Vec<f64> {
    let mut c = to_complex(a);
    plan.inverse_in_place(&mut c);
    from_complex(&c)
}

/// `|z|` per element of a split complex vector.
pub fn cabs(a: &[f64]) -> Vec<f64> {
    let n = a.len() / 2;
    (0..n).map(|i| a[i].hypot(a[n + i])).collect()
}

pub fn gather(a: &[f64], idx: &[usize], w: &[f64]) -> Vec<f64> {
    idx.iter().zip(w).map(|(&i, &s)| s * a[i]).collect()
}

/// Shape of a same-length 1-D convolution along the last axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Conv1dShape {
    pub c_in: usize,
    pub c_out: usize,
    pub kernel: usize,
    pub len: usize,
}

impl Conv1dShape {
    pub fn weight_len(&self) -> usize {
        self.c_out * self.c_in * self.kernel
    }

    fn pad(&self) -> isize {
        (self.kernel as isize - 1) / 2
    }
}

/// Cross-correlation with zero padding: `out[o,t] = b[o] + Σ w[o,i,j]·x[i,t+j-pad]`.
pub fn conv1d(x: &[f64], w: &[f64], b: &[f64], s: Conv1dShape) -> Vec<f64> {
    assert_eq!(x.len(), s.c_in * s.len, "conv input size");
    assert_eq!(w.len(), s.weight_len(), "conv weight size");
    assert_eq!(b.len(), s.c_out, "conv bias size");
    let pad = s.pad();
    let mut out = vec![0.0; s.c_out * s.len];
    for o in 0..s.c_out {
        let row = &mut out[o * s.len..(o + 1) * s.len];
        row.iter_mut().for_each(|v| *v = b[o]);
        for i in 0..s.c_in {
            let xi = &x[i * s.len..(i + 1) * s.len];
            for j in 0..s.kernel {
                let wv = w[(o * s.c_in + i) * s.kernel + j];
                let shift = j as isize - pad;
                for (t, r) in row.iter_mut().enumerate() {
                    let src = t as isize + shift;
                    if src >= 0 && (src as usize) < s.len {
                        *r += wv * xi[src as usize];
                    }
                }
            }
        }
    }
    out
}

/// Gradients of [`conv1d`] with respect to input, weight and bias.
pub fn conv1d_backward(
    x: &[f64],
    w: &[f64],
    g: &[f64],
    s: Conv1dShape,
) -> (Vec<f64>, Vec<f64>, Vec<f64>) {
    let pad = s.pad();
    let mut gx = vec![0.0; x.len()];
    let mut gw = vec![0.0; w.len()];
    let mut gb = vec![0.0; s.c_out];
    for o in 0..s.c_out {
        let go = &g[o * s.len..(o + 1) * s.len];
        gb[o] = go.iter().sum();
        for i in 0..s.c_in {
            for j in 0..s.kernel {
                let widx = (o * s.c_in + i) * s.kernel + j;
                let shift = j as isize - pad;
                let mut acc = 0.0;
                for (t, &gv) in go.iter().enumerate() {
                    let src = t as isize + shift;
                    if src >= 0 && (src as usize) < s.len {
                        let xi = i * s.len + src as usize;
                        acc += gv * x[xi];
                        gx[xi] += gv * w[widx];
                    }
                }
                gw[widx] += acc;
            }
        }
    }
    (gx, gw, gb)
}
