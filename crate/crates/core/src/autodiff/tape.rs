use std::collections::HashMap;
use std::rc::Rc;
use std::sync::atomic::{AtomicU32, Ordering};

use super::kernels::{self as k, Conv1dShape};
use super::Backend;
use crate::error::{Error, Result};
use crate::signal::FftPlan;

static NEXT_TAPE: AtomicU32 = AtomicU32::new(1);

/// Handle to a value recorded on a [`Tape`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var {
    id: u32,
    tape: u32,
}

impl Var {
    pub fn index(self) -> usize {
        self.id as usize
    }
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    Const,
    Add(usize, usize),
    Sub(usize, usize),
    Mul(usize, usize),
    Div(usize, usize),
    Neg(usize),
    Scale(usize, f64),
    Offset(usize),
    MulScalar(usize, usize),
    AddScalar(usize, usize),
    MulConst(usize, Rc<[f64]>),
    Exp(usize),
    Log(usize),
    Tanh(usize),
    Sigmoid(usize),
    Relu(usize),
    Softplus(usize),
    Sqrt(usize),
    Abs(usize),
    Square(usize),
    MatVec {
        w: usize,
        x: usize,
        rows: usize,
        cols: usize,
    },
    Sum(usize),
    Mean(usize),
    CMul(usize, usize),
    CAbs(usize),
    Fft(usize),
    Ifft(usize),
    Gather {
        a: usize,
        idx: Rc<[usize]>,
        w: Rc<[f64]>,
    },
    Slice {
        a: usize,
        start: usize,
    },
    Concat(Vec<usize>),
    Conv1d {
        x: usize,
        w: usize,
        b: usize,
        shape: Conv1dShape,
    },
}

#[derive(Debug)]
struct Node {
    op: Op,
    value: Vec<f64>,
    needs_grad: bool,
}

/// Recording backend. Gradients flow only into [`Backend::param`] leaves and
/// values derived from them.
#[derive(Debug)]
pub struct Tape {
    id: u32,
    nodes: Vec<Node>,
    plans: HashMap<usize, FftPlan>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

/// Gradients of a scalar with respect to every recorded value.
#[derive(Debug)]
pub struct Gradients {
    tape: u32,
    grads: Vec<Option<Vec<f64>>>,
    lens: Vec<usize>,
}

impl Gradients {
    /// Gradient for `v`; zeros when `v` does not influence the loss.
    pub fn get(&self, v: Var) -> Vec<f64> {
        assert_eq!(v.tape, self.tape, "variable from a different tape");
        match &self.grads[v.index()] {
            Some(g) => g.clone(),
            None => vec![0.0; self.lens[v.index()]],
        }
    }

    pub fn get_ref(&self, v: Var) -> Option<&[f64]> {
        assert_eq!(v.tape, self.tape, "variable from a different tape");
        self.grads[v.index()].as_deref()
    }
}

fn acc(slot: &mut Option<Vec<f64>>, len: usize) -> &mut Vec<f64> {
    slot.get_or_insert_with(|| vec![0.0; len])
}

impl Tape {
    pub fn new() -> Self {
        Self {
            id: NEXT_TAPE.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
            plans: HashMap::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn idx(&self, v: &Var) -> usize {
        assert_eq!(v.tape, self.id, "variable from a different tape");
        v.index()
    }

    fn push(&mut self, op: Op, value: Vec<f64>, inputs: &[usize]) -> Var {
        let needs_grad = match op {
            Op::Leaf => true,
            Op::Const => false,
            _ => inputs.iter().any(|&i| self.nodes[i].needs_grad),
        };
        let id = self.nodes.len();
        self.nodes.push(Node {
            op,
            value,
            needs_grad,
        });
        Var {
            id: id as u32,
            tape: self.id,
        }
    }

    fn plan(&mut self, n: usize) -> &FftPlan {
        self.plans
            .entry(n)
            .or_insert_with(|| FftPlan::new(n).expect("non-zero transform size"))
    }

    fn unary(&mut self, a: &Var, op: impl Fn(usize) -> Op, f: impl Fn(f64) -> f64) -> Var {
        let ia = self.idx(a);
        let v = k::map(&self.nodes[ia].value, f);
        self.push(op(ia), v, &[ia])
    }

    fn binary(
        &mut self,
        a: &Var,
        b: &Var,
        op: impl Fn(usize, usize) -> Op,
        f: impl Fn(f64, f64) -> f64,
    ) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let v = k::zip(&self.nodes[ia].value, &self.nodes[ib].value, f);
        self.push(op(ia, ib), v, &[ia, ib])
    }

    /// Reverse sweep from a scalar `loss`.
    pub fn backward(&mut self, loss: Var) -> Result<Gradients> {
        let root = self.idx(&loss);
        if self.nodes[root].value.len() != 1 {
            return Err(Error::Autodiff(format!(
                "backward needs a scalar loss, got length {}",
                self.nodes[root].value.len()
            )));
        }
        let n = root + 1;
        let mut grads: Vec<Option<Vec<f64>>> = vec![None; n];
        grads[root] = Some(vec![1.0]);
        for id in (0..n).rev() {
            if !self.nodes[id].needs_grad {
                continue;
            }
            let Some(g) = grads[id].take() else { continue };
            self.propagate(id, &g, &mut grads);
            grads[id] = Some(g);
        }
        // Drop gradients of values that cannot reach a parameter.
        for (slot, node) in grads.iter_mut().zip(&self.nodes) {
            if !node.needs_grad {
                *slot = None;
            }
        }
        Ok(Gradients {
            tape: self.id,
            grads,
            lens: self.nodes[..n].iter().map(|nd| nd.value.len()).collect(),
        })
    }

    fn propagate(&mut self, id: usize, g: &[f64], grads: &mut [Option<Vec<f64>>]) {
        let nodes = &self.nodes;
        let val = |i: usize| -> &[f64] { &nodes[i].value };
        let wants = |i: usize| nodes[i].needs_grad;
        let out = &nodes[id].value;
        let mut add_to = |i: usize, f: &dyn Fn(&mut [f64])| {
            if wants(i) {
                f(acc(&mut grads[i], nodes[i].value.len()));
            }
        };
        match &nodes[id].op {
            Op::Leaf | Op::Const => {}
            Op::Add(a, b) => {
                add_to(*a, &|ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                add_to(*b, &|gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x += y));
            }
            Op::Sub(a, b) => {
                add_to(*a, &|ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                add_to(*b, &|gb| gb.iter_mut().zip(g).for_each(|(x, y)| *x -= y));
            }
            Op::Mul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                add_to(*a, &|ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * vb[i];
                    }
                });
                add_to(*b, &|gb| {
                    for i in 0..g.len() {
                        gb[i] += g[i] * va[i];
                    }
                });
            }
            Op::Div(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                add_to(*a, &|ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] / vb[i];
                    }
                });
                add_to(*b, &|gb| {
                    for i in 0..g.len() {
                        gb[i] -= g[i] * va[i] / (vb[i] * vb[i]);
                    }
                });
            }
            Op::Neg(a) => add_to(*a, &|ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x -= y)),
            Op::Scale(a, c) => add_to(*a, &|ga| {
                ga.iter_mut().zip(g).for_each(|(x, y)| *x += c * y)
            }),
            Op::Offset(a) => add_to(*a, &|ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y)),
            Op::MulScalar(a, s) => {
                let (va, sv) = (val(*a), val(*s)[0]);
                add_to(*a, &|ga| {
                    ga.iter_mut().zip(g).for_each(|(x, y)| *x += sv * y)
                });
                add_to(*s, &|gs| {
                    gs[0] += g.iter().zip(va).map(|(y, x)| y * x).sum::<f64>()
                });
            }
            Op::AddScalar(a, s) => {
                add_to(*a, &|ga| ga.iter_mut().zip(g).for_each(|(x, y)| *x += y));
                add_to(*s, &|gs| gs[0] += g.iter().sum::<f64>());
            }
            Op::MulConst(a, c) => {
                add_to(*a, &|ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * c[i];
                    }
                });
            }
            Op::Exp(a) => add_to(*a, &|ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * out[i];
                }
            }),
            Op::Log(a) => {
                let va = val(*a);
                add_to(*a, &|ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] / va[i];
                    }
                })
            }
            Op::Tanh(a) => add_to(*a, &|ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * (1.0 - out[i] * out[i]);
                }
            }),
            Op::Sigmoid(a) => add_to(*a, &|ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * out[i] * (1.0 - out[i]);
                }
            }),
            Op::Relu(a) => {
                let va = val(*a);
                add_to(*a, &|ga| {
                    for i in 0..g.len() {
                        if va[i] > 0.0 {
                            ga[i] += g[i];
                        }
                    }
                })
            }
            Op::Softplus(a) => {
                let va = val(*a);
                add_to(*a, &|ga| {
                    for i in 0..g.len() {
                        ga[i] += g[i] * k::sigmoid(va[i]);
                    }
                })
            }
            Op::Sqrt(a) => add_to(*a, &|ga| {
                for i in 0..g.len() {
                    ga[i] += g[i] * 0.5 / out[i];
                }
            }),
            Op::Abs(a) => {
                let va = val(*a);
                add_to(*a, &|ga| {
                    for i in 0..g.len() {
                        if va[i] != 0.0 {
                            ga[i] += g[i] * va[i].signum();
                        }
                    }
                })
            }
            Op::Square(a) => {
                let va = val(*a);
                add_to(*a, &|ga| {
                    for i in 0..g.len() {
                        ga[i] += 2.0 * g[i] * va[i];
                    }
                })
            }
            Op::MatVec { w, x, rows, cols } => {
                let (vw, vx, cols) = (val(*w), val(*x), *cols);
                add_to(*w, &|gw| {
                    for r in 0..*rows {
                        let gr = g[r];
                        if gr != 0.0 {
                            let row = &mut gw[r * cols..(r + 1) * cols];
                            row.iter_mut().zip(vx).for_each(|(a, b)| *a += gr * b);
                        }
                    }
                });
                add_to(*x, &|gx| {
                    for r in 0..*rows {
                        let gr = g[r];
                        if gr != 0.0 {
                            let row = &vw[r * cols..(r + 1) * cols];
                            gx.iter_mut().zip(row).for_each(|(a, b)| *a += gr * b);
                        }
                    }
                });
            }
            Op::Sum(a) => add_to(*a, &|ga| ga.iter_mut().for_each(|x| *x += g[0])),
            Op::Mean(a) => {
                let n = val(*a).len() as f64;
                add_to(*a, &|ga| ga.iter_mut().for_each(|x| *x += g[0] / n))
            }
            Op::CMul(a, b) => {
                let (va, vb) = (val(*a), val(*b));
                let n = g.len() / 2;
                // Adjoint of z -> z·c is g -> g·conj(c).
                let adj = |dst: &mut [f64], c: &[f64]| {
                    for i in 0..n {
                        let (gr, gi, cr, ci) = (g[i], g[n + i], c[i], c[n + i]);
                        dst[i] += gr * cr + gi * ci;
                        dst[n + i] += gi * cr - gr * ci;
                    }
                };
                add_to(*a, &|ga| adj(ga, vb));
                add_to(*b, &|gb| adj(gb, va));
            }
            Op::CAbs(a) => {
                let va = val(*a);
                let n = g.len();
                add_to(*a, &|ga| {
                    for i in 0..n {
                        if out[i] > 0.0 {
                            ga[i] += g[i] * va[i] / out[i];
                            ga[n + i] += g[i] * va[n + i] / out[i];
                        }
                    }
                })
            }
            Op::Fft(a) | Op::Ifft(a) => {
                let a = *a;
                if wants(a) {
                    let n = g.len() / 2;
                    let is_fft = matches!(nodes[id].op, Op::Fft(_));
                    // Adjoints: fft -> n·ifft, ifft -> fft/n.
                    let plan = self.plans.get(&n).expect("plan recorded in forward pass");
                    let (v, s) = if is_fft {
                        (k::ifft(plan, g), n as f64)
                    } else {
                        (k::fft(plan, g), 1.0 / n as f64)
                    };
                    let ga = acc(&mut grads[a], 2 * n);
                    ga.iter_mut().zip(&v).for_each(|(x, y)| *x += s * y);
                }
            }
            Op::Gather { a, idx, w } => add_to(*a, &|ga| {
                for ((&i, &s), &gv) in idx.iter().zip(w.iter()).zip(g) {
                    ga[i] += s * gv;
                }
            }),
            Op::Slice { a, start } => add_to(*a, &|ga| {
                ga[*start..*start + g.len()]
                    .iter_mut()
                    .zip(g)
                    .for_each(|(x, y)| *x += y)
            }),
            Op::Concat(parts) => {
                let mut off = 0;
                for &p in parts {
                    let len = nodes[p].value.len();
                    let seg = &g[off..off + len];
                    add_to(p, &|gp| gp.iter_mut().zip(seg).for_each(|(x, y)| *x += y));
                    off += len;
                }
            }
            Op::Conv1d { x, w, b, shape } => {
                let (gx, gw, gb) = k::conv1d_backward(val(*x), val(*w), g, *shape);
                add_to(*x, &|d| d.iter_mut().zip(&gx).for_each(|(a, b)| *a += b));
                add_to(*w, &|d| d.iter_mut().zip(&gw).for_each(|(a, b)| *a += b));
                add_to(*b, &|d| d.iter_mut().zip(&gb).for_each(|(a, b)| *a += b));
            }
        }
    }
}

impl Backend for Tape {
    type T = Var;

    fn constant(&mut self, data: Vec<f64>) -> Var {
        self.push(Op::Const, data, &[])
    }

    fn param(&mut self, data: Vec<f64>) -> Var {
        self.push(Op::Leaf, data, &[])
    }

    fn value<'a>(&'a self, t: &'a Var) -> &'a [f64] {
        &self.nodes[self.idx(t)].value
    }

    fn stop_gradient(&mut self, a: &Var) -> Var {
        let v = self.value(a).to_vec();
        self.constant(v)
    }

    fn add(&mut self, a: &Var, b: &Var) -> Var {
        self.binary(a, b, Op::Add, |x, y| x + y)
    }

    fn sub(&mut self, a: &Var, b: &Var) -> Var {
        self.binary(a, b, Op::Sub, |x, y| x - y)
    }

    fn mul(&mut self, a: &Var, b: &Var) -> Var {
        self.binary(a, b, Op::Mul, |x, y| x * y)
    }

    fn div(&mut self, a: &Var, b: &Var) -> Var {
        self.binary(a, b, Op::Div, |x, y| x / y)
    }

    fn neg(&mut self, a: &Var) -> Var {
        self.unary(a, Op::Neg, |x| -x)
    }

    fn scale(&mut self, a: &Var, c: f64) -> Var {
        self.unary(a, |i| Op::Scale(i, c), |x| c * x)
    }

    fn offset(&mut self, a: &Var, c: f64) -> Var {
        self.unary(a, Op::Offset, |x| x + c)
    }

    fn mul_scalar(&mut self, a: &Var, s: &Var) -> Var {
        let (ia, is) = (self.idx(a), self.idx(s));
        let sv = self.nodes[is].value[0];
        let v = k::map(&self.nodes[ia].value, |x| x * sv);
        self.push(Op::MulScalar(ia, is), v, &[ia, is])
    }

    fn add_scalar(&mut self, a: &Var, s: &Var) -> Var {
        let (ia, is) = (self.idx(a), self.idx(s));
        let sv = self.nodes[is].value[0];
        let v = k::map(&self.nodes[ia].value, |x| x + sv);
        self.push(Op::AddScalar(ia, is), v, &[ia, is])
    }

    fn mul_const(&mut self, a: &Var, c: Rc<[f64]>) -> Var {
        let ia = self.idx(a);
        let v = k::zip(&self.nodes[ia].value, &c, |x, y| x * y);
        self.push(Op::MulConst(ia, c), v, &[ia])
    }

    fn exp(&mut self, a: &Var) -> Var {
        self.unary(a, Op::Exp, f64::exp)
    }

    fn log(&mut self, a: &Var) -> Var {
        self.unary(a, Op::Log, f64::ln)
    }

    fn tanh(&mut self, a: &Var) -> Var {
        self.unary(a, Op::Tanh, f64::tanh)
    }

    fn sigmoid(&mut self, a: &Var) -> Var {
        self.unary(a, Op::Sigmoid, k::sigmoid)
    }

    fn relu(&mut self, a: &Var) -> Var {
        self.unary(a, Op::Relu, |x| x.max(0.0))
    }

    fn softplus(&mut self, a: &Var) -> Var {
        self.unary(a, Op::Softplus, k::softplus)
    }

    fn sqrt(&mut self, a: &Var) -> Var {
        self.unary(a, Op::Sqrt, f64::sqrt)
    }

    fn abs(&mut self, a: &Var) -> Var {
        self.unary(a, Op::Abs, f64::abs)
    }

    fn square(&mut self, a: &Var) -> Var {
        self.unary(a, Op::Square, |x| x * x)
    }

    fn matvec(&mut self, w: &Var, x: &Var, rows: usize, cols: usize) -> Var {
        let (iw, ix) = (self.idx(w), self.idx(x));
        let v = k::matvec(&self.nodes[iw].value, &self.nodes[ix].value, rows, cols);
        self.push(
            Op::MatVec {
                w: iw,
                x: ix,
                rows,
                cols,
            },
            v,
            &[iw, ix],
        )
    }

    fn sum(&mut self, a: &Var) -> Var {
        let ia = self.idx(a);
        let v = vec![self.nodes[ia].value.iter().sum()];
        self.push(Op::Sum(ia), v, &[ia])
    }

    fn mean(&mut self, a: &Var) -> Var {
        let ia = self.idx(a);
        let vals = &self.nodes[ia].value;
        let v = vec![vals.iter().sum::<f64>() / vals.len() as f64];
        self.push(Op::Mean(ia), v, &[ia])
    }

    fn cmul(&mut self, a: &Var, b: &Var) -> Var {
        let (ia, ib) = (self.idx(a), self.idx(b));
        let v = k::cmul(&self.nodes[ia].value, &self.nodes[ib].value);
        self.push(Op::CMul(ia, ib), v, &[ia, ib])
    }

    fn cabs(&mut self, a: &Var) -> Var {
        let ia = self.idx(a);
        let v = k::cabs(&self.nodes[ia].value);
        self.push(Op::CAbs(ia), v, &[ia])
    }

    fn fft(&mut self, a: &Var) -> Var {
        let ia = self.idx(a);
        let n = self.nodes[ia].value.len() / 2;
        self.plan(n);
        let v = k::fft(&self.plans[&n], &self.nodes[ia].value);
        self.push(Op::Fft(ia), v, &[ia])
    }

    fn ifft(&mut self, a: &Var) -> Var {
        let ia = self.idx(a);
        let n = self.nodes[ia].value.len() / 2;
        self.plan(n);
        let v = k::ifft(&self.plans[&n], &self.nodes[ia].value);
        self.push(Op::Ifft(ia), v, &[ia])
    }

    fn gather(&mut self, a: &Var, idx: Rc<[usize]>, w: Rc<[f64]>) -> Var {
        assert_eq!(idx.len(), w.len(), "gather index and weight lengths differ");
        let ia = self.idx(a);
        let v = k::gather(&self.nodes[ia].value, &idx, &w);
        self.push(Op::Gather { a: ia, idx, w }, v, &[ia])
    }

    fn slice(&mut self, a: &Var, start: usize, len: usize) -> Var {
        let ia = self.idx(a);
        let v = self.nodes[ia].value[start..start + len].to_vec();
        self.push(Op::Slice { a: ia, start }, v, &[ia])
    }

    fn concat(&mut self, parts: &[Var]) -> Var {
        let ids: Vec<usize> = parts.iter().map(|p| self.idx(p)).collect();
        let v: Vec<f64> = ids
            .iter()
            .flat_map(|&i| self.nodes[i].value.iter().copied())
            .collect();
        let ids2 = ids.clone();
        self.push(Op::Concat(ids), v, &ids2)
    }

    fn conv1d(&mut self, x: &Var, w: &Var, b: &Var, shape: Conv1dShape) -> Var {
        let (ix, iw, ib) = (self.idx(x), self.idx(w), self.idx(b));
        let v = k::conv1d(
            &self.nodes[ix].value,
            &self.nodes[iw].value,
            &self.nodes[ib].value,
            shape,
        );
        self.push(
            Op::Conv1d {
                x: ix,
                w: iw,
                b: ib,
                shape,
            },
            v,
            &[ix, iw, ib],
        )
    }
}
