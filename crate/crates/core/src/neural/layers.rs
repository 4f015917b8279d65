//! Network building blocks written against [`Backend`].

use std::collections::HashMap;

use super::ModelWeights;
use crate::autodiff::Backend;

/// Backend handles for every weight tensor, in name order.
pub struct Params<T> {
    names: Vec<String>,
    values: Vec<T>,
    index: HashMap<String, usize>,
}

impl<T: Clone> Params<T> {
    /// Registers every tensor of `weights` as a trainable leaf.
    pub fn new<B: Backend<T = T>>(b: &mut B, weights: &ModelWeights) -> Self {
        let mut names = Vec::new();
        let mut values = Vec::new();
        for (name, t) in weights.iter() {
            names.push(name.clone());
            values.push(b.param(t.data.clone()));
        }
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Self {
            names,
            values,
            index,
        }
    }

    /// Wraps handles created elsewhere, e.g. by a gradient check.
    pub fn from_values(names: Vec<String>, values: Vec<T>) -> Self {
        assert_eq!(names.len(), values.len(), "one handle per name");
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i))
            .collect();
        Self {
            names,
            values,
            index,
        }
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    /// Handle for `name`. Weights are validated on load, so a missing name
    /// is a programming error.
    pub fn get(&self, name: &str) -> &T {
        &self.values[*self
            .index
            .get(name)
            .unwrap_or_else(|| panic!("weight tensor '{name}' not registered"))]
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &T)> {
        self.names.iter().zip(&self.values)
    }
}

/// `W·x + b` with `W` stored as `[out, in]`.
pub fn linear<B: Backend>(
    b: &mut B,
    p: &Params<B::T>,
    prefix: &str,
    x: &B::T,
    input: usize,
    output: usize,
) -> B::T {
    let w = p.get(&format!("{prefix}.w")).clone();
    let bias = p.get(&format!("{prefix}.b")).clone();
    b.linear(&w, &bias, x, output, input)
}

/// Hidden and cell state of one LSTM layer.
#[derive(Debug, Clone)]
pub struct LstmState<T> {
    pub h: T,
    pub c: T,
}

impl<T> LstmState<T> {
    pub fn zeros<B: Backend<T = T>>(b: &mut B, hidden: usize) -> Self {
        Self {
            h: b.constant(vec![0.0; hidden]),
            c: b.constant(vec![0.0; hidden]),
        }
    }
}

/// One LSTM step, gate order input, forget, cell, output.
pub fn lstm_cell<B: Backend>(
    b: &mut B,
    p: &Params<B::T>,
    prefix: &str,
    x: &B::T,
    state: &LstmState<B::T>,
    input: usize,
    hidden: usize,
) -> LstmState<B::T> {
    let w_ih = p.get(&format!("{prefix}.w_ih")).clone();
    let w_hh = p.get(&format!("{prefix}.w_hh")).clone();
    let bias = p.get(&format!("{prefix}.b")).clone();
    let gx = b.matvec(&w_ih, x, 4 * hidden, input);
    let gh = b.matvec(&w_hh, &state.h, 4 * hidden, hidden);
    let g = b.add(&gx, &gh);
    let g = b.add(&g, &bias);
    let gi = b.slice(&g, 0, hidden);
    let gf = b.slice(&g, hidden, hidden);
    let gg = b.slice(&g, 2 * hidden, hidden);
    let go = b.slice(&g, 3 * hidden, hidden);
    let i = b.sigmoid(&gi);
    let f = b.sigmoid(&gf);
    let cand = b.tanh(&gg);
    let o = b.sigmoid(&go);
    let fc = b.mul(&f, &state.c);
    let ic = b.mul(&i, &cand);
    let c = b.add(&fc, &ic);
    let tc = b.tanh(&c);
    let h = b.mul(&o, &tc);
    LstmState { h, c }
}

/// Runs [`lstm_cell`] over a sequence and returns every output.
pub fn lstm_forward<B: Backend>(
    b: &mut B,
    p: &Params<B::T>,
    prefix: &str,
    inputs: &[B::T],
    mut state: LstmState<B::T>,
    input: usize,
    hidden: usize,
) -> (Vec<B::T>, LstmState<B::T>) {
    let mut out = Vec::with_capacity(inputs.len());
    for x in inputs {
        state = lstm_cell(b, p, prefix, x, &state, input, hidden);
        out.push(state.h.clone());
    }
    (out, state)
}
