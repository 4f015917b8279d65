//! Gradient checks of every backend primitive in isolation.

use std::rc::Rc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use super::{grad_check, Backend, Conv1dShape, Objective};
use crate::error::Result;

fn rand_vec(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(lo..hi)).collect()
}

/// Reduces any vector to a scalar with fixed random weights so every output
/// element contributes a distinct gradient.
fn reduce<B: Backend>(b: &mut B, y: &B::T, seed: u64) -> B::T {
    let n = b.len(y);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let w = b.constant(rand_vec(&mut rng, n, -1.0, 1.0));
    b.dot(y, &w)
}

/// Primitive under test.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Prim {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    Scale,
    Offset,
    MulScalar,
    AddScalar,
    MulConst,
    Exp,
    Log,
    Tanh,
    Sigmoid,
    Relu,
    Softplus,
    Sqrt,
    Abs,
    Square,
    MatVec,
    Sum,
    Mean,
    CMul,
    CAbs,
    Fft,
    Ifft,
    Gather,
    Slice,
    Concat,
    Conv1d,
}

/// Scalar objective built around one primitive, over two operands of
/// length [`PRIM_OPERAND_LEN`].
pub struct PrimObjective(pub Prim);

pub const PRIM_OPERAND_LEN: usize = 8;
const N: usize = PRIM_OPERAND_LEN;

impl Objective for PrimObjective {
    fn eval<B: Backend>(&self, b: &mut B, p: &[B::T]) -> Result<B::T> {
        let (a, c) = (&p[0], &p[1]);
        let y = match self.0 {
            Prim::Add => b.add(a, c),
            Prim::Sub => b.sub(a, c),
            Prim::Mul => b.mul(a, c),
            Prim::Div => b.div(a, c),
            Prim::Neg => b.neg(a),
            Prim::Scale => b.scale(a, -1.7),
            Prim::Offset => {
                let o = b.offset(a, 0.3);
                b.square(&o)
            }
            Prim::MulScalar => {
                let s = b.slice(c, 2, 1);
                b.mul_scalar(a, &s)
            }
            Prim::AddScalar => {
                let s = b.slice(c, 2, 1);
                let y = b.add_scalar(a, &s);
                b.square(&y)
            }
            Prim::MulConst => b.mul_const(
                a,
                Rc::from((0..N).map(|i| i as f64 - 3.0).collect::<Vec<_>>()),
            ),
            Prim::Exp => b.exp(a),
            Prim::Log => b.log(c),
            Prim::Tanh => b.tanh(a),
            Prim::Sigmoid => b.sigmoid(a),
            Prim::Relu => b.relu(a),
            Prim::Softplus => b.softplus(a),
            Prim::Sqrt => b.sqrt(c),
            Prim::Abs => b.abs(a),
            Prim::Square => b.square(a),
            Prim::MatVec => {
                let x = b.slice(c, 0, 4);
                let w = b.concat(&[a.clone(), a.clone(), a.clone(), a.clone()]);
                let w = b.slice(&w, 0, 12);
                let x3 = b.slice(&x, 0, 4);
                b.matvec(&w, &x3, 3, 4)
            }
            Prim::Sum => {
                let s = b.sum(a);
                b.square(&s)
            }
            Prim::Mean => {
                let s = b.mean(a);
                b.square(&s)
            }
            Prim::CMul => b.cmul(a, c),
            Prim::CAbs => b.cabs(a),
            Prim::Fft => b.fft(a),
            Prim::Ifft => b.ifft(a),
            Prim::Gather => b.gather(
                a,
                Rc::from(vec![3usize, 0, 3, 7, 5]),
                Rc::from(vec![1.0, -2.0, 0.5, 1.5, -1.0]),
            ),
            Prim::Slice => b.slice(a, 2, 4),
            Prim::Concat => b.concat(&[c.clone(), a.clone(), c.clone()]),
            Prim::Conv1d => {
                let shape = Conv1dShape {
                    c_in: 2,
                    c_out: 3,
                    kernel: 3,
                    len: 4,
                };
                let w = b.concat(&[a.clone(), c.clone(), a.clone()]);
                let w = b.slice(&w, 0, 18);
                let bias = b.slice(c, 5, 3);
                b.conv1d(a, &w, &bias, shape)
            }
        };
        Ok(reduce(b, &y, 99))
    }
}

fn check(prim: Prim, h: f64, floor: f64) -> Result<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(prim as u64 + 1);
    // Second operand stays positive and away from zero for div, log and sqrt;
    // first operand avoids the relu and abs kinks.
    let mut a = rand_vec(&mut rng, N, -1.0, 1.0);
    for v in &mut a {
        if v.abs() < 0.1 {
            *v += 0.2;
        }
    }
    let c = rand_vec(&mut rng, N, 0.5, 2.0);
    let params = vec![("a".to_string(), a), ("c".to_string(), c)];
    Ok(grad_check(&PrimObjective(prim), &params, N, h, floor)?.max_rel_err)
}

impl Prim {
    pub const ALL: [Prim; 30] = {
        use Prim::*;
        [
            Add, Sub, Mul, Div, Neg, Scale, Offset, MulScalar, AddScalar, MulConst, Exp, Log, Tanh,
            Sigmoid, Relu, Softplus, Sqrt, Abs, Square, MatVec, Sum, Mean, CMul, CAbs, Fft, Ifft,
            Gather, Slice, Concat, Conv1d,
        ]
    };
}

#[derive(Debug, Clone, Serialize)]
pub struct PrimitiveCheck {
    pub primitive: String,
    pub max_rel_err: f64,
}

/// Central differences with step `1e-6` against the tape for every
/// primitive, probing all 8 coordinates of both operands.
pub fn primitive_grad_checks() -> Result<Vec<PrimitiveCheck>> {
    Prim::ALL
        .iter()
        .map(|&p| {
            Ok(PrimitiveCheck {
                primitive: format!("{p:?}"),
                max_rel_err: check(p, 1e-6, 1e-8)?,
            })
        })
        .collect()
}
