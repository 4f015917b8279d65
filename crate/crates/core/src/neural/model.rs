//! The NeuralKalman recursion: the diagonal Kalman filter with learned
//! far-end estimate `g(·)`, transition factor `A`, state transition `t(·)`
//! and covariance corrections, written once for every backend.

use std::rc::Rc;

use num_complex::Complex64;

use super::crf::{apply_crf, expand_complex, expand_real, gather_reference, one_sided};
use super::features::{FrameInputs, Frontend};
use super::layers::{linear, lstm_cell, LstmState, Params};
use super::{HookSet, ModelConfig, ModelWeights, TransitionForm};
use crate::autodiff::{Backend, Conv1dShape, Eval};
use crate::error::{Error, Result};
use crate::filters::{BlockOutput, Canceller, FdkfConfig};
use crate::signal::{FftPlan, Half};

/// Carried per-stream state.
#[derive(Debug, Clone)]
pub struct NkState<T> {
    /// Full split spectrum of the echo-path estimate (`2M`).
    pub w: T,
    pub p: T,
    pub psi_vv: T,
    pub w_power: T,
    pub trunk: Vec<LstmState<T>>,
    pub t_cell: LstmState<T>,
    pub psi_cells: [LstmState<T>; 2],
    pub frame: usize,
}

#[derive(Debug, Clone)]
pub struct StepOutput<T> {
    /// `R` near-end samples.
    pub out: T,
    /// One-sided split near-end spectrum estimate (`2F`).
    pub s_hat: T,
    pub a: f64,
}

#[derive(Debug, Clone)]
pub struct RunOutput<T> {
    pub blocks: Vec<T>,
    pub spectra: Vec<T>,
    pub a_trace: Vec<f64>,
}

type Pattern = (Rc<[usize]>, Rc<[f64]>);

#[derive(Debug, Clone)]
pub struct NeuralKalman {
    model: ModelConfig,
    fdkf: FdkfConfig,
    hooks: HookSet,
    mask_last: Vec<f64>,
    mask_first: Vec<f64>,
    mask_update: Vec<f64>,
    expand_c: Pattern,
    expand_r: Pattern,
    half: Pattern,
}

fn check_finite<B: Backend>(b: &B, t: &B::T, frame: usize, what: &'static str) -> Result<()> {
    if b.value(t).iter().all(|v| v.is_finite()) {
        Ok(())
    } else {
        Err(Error::Diverged { frame, what })
    }
}

impl NeuralKalman {
    pub fn new(model: ModelConfig, fdkf: FdkfConfig, hooks: HookSet) -> Result<Self> {
        model.validate()?;
        fdkf.validate()?;
        if model.block != fdkf.block {
            return Err(Error::Config(format!(
                "model block {:?} differs from filter block {:?}",
                model.block, fdkf.block
            )));
        }
        let m = model.block.fft_size;
        Ok(Self {
            mask_last: Half::Last.mask(m),
            mask_first: Half::First.mask(m),
            mask_update: fdkf.update_projection.mask(m),
            expand_c: expand_complex(m),
            expand_r: expand_real(m),
            half: one_sided(m),
            model,
            fdkf,
            hooks,
        })
    }

    /// Default filter settings on the model's block grid.
    pub fn for_model(model: ModelConfig, hooks: HookSet) -> Result<Self> {
        Self::new(model, FdkfConfig::with_block(model.block), hooks)
    }

    pub fn model_config(&self) -> &ModelConfig {
        &self.model
    }

    pub fn fdkf_config(&self) -> &FdkfConfig {
        &self.fdkf
    }

    pub fn hooks(&self) -> HookSet {
        self.hooks
    }

    pub fn init_state<B: Backend>(&self, b: &mut B) -> NkState<B::T> {
        let m = self.model.block.fft_size;
        let cfg = &self.model;
        NkState {
            w: b.constant(vec![0.0; 2 * m]),
            p: b.constant(vec![self.fdkf.p_init; m]),
            psi_vv: b.constant(vec![0.0; m]),
            w_power: b.constant(vec![0.0; m]),
            trunk: (0..cfg.lstm_layers)
                .map(|_| LstmState::zeros(b, cfg.lstm_hidden))
                .collect(),
            t_cell: LstmState::zeros(b, cfg.t_lstm_hidden),
            psi_cells: [
                LstmState::zeros(b, cfg.psi_lstm_hidden),
                LstmState::zeros(b, cfg.psi_lstm_hidden),
            ],
            frame: 0,
        }
    }

    fn gather<B: Backend>(b: &mut B, a: &B::T, pat: &Pattern) -> B::T {
        b.gather(a, pat.0.clone(), pat.1.clone())
    }

    fn trunk<B: Backend>(
        &self,
        b: &mut B,
        p: &Params<B::T>,
        st: &mut NkState<B::T>,
        features: &[f64],
    ) -> B::T {
        let cfg = &self.model;
        let x = b.constant(features.to_vec());
        let mut h = linear(
            b,
            p,
            "feat.proj",
            &x,
            cfg.feature_dim(),
            cfg.feature_proj_dim,
        );
        let mut input = cfg.feature_proj_dim;
        for l in 0..cfg.lstm_layers {
            let next = lstm_cell(
                b,
                p,
                &format!("trunk.{l}"),
                &h,
                &st.trunk[l],
                input,
                cfg.lstm_hidden,
            );
            h = next.h.clone();
            st.trunk[l] = next;
            input = cfg.lstm_hidden;
        }
        h
    }

    /// `g(·)`: cRF coefficients from the trunk, applied to the reference
    /// neighbourhood. Returns the full split far-end estimate.
    fn farend_estimate<B: Backend>(
        &self,
        b: &mut B,
        p: &Params<B::T>,
        h: &B::T,
        frames: &[FrameInputs],
    ) -> B::T {
        let cfg = &self.model;
        let (nb, c, taps) = (cfg.n_bins, cfg.conv_channels, cfg.crf_taps());
        let z = linear(b, p, "g.lin", h, cfg.lstm_hidden, c * nb);
        let z = b.relu(&z);
        let shape1 = Conv1dShape {
            c_in: c,
            c_out: c,
            kernel: cfg.conv_kernel,
            len: nb,
        };
        let (w1, b1) = (p.get("g.conv1.w").clone(), p.get("g.conv1.b").clone());
        let z = b.conv1d(&z, &w1, &b1, shape1);
        let z = b.relu(&z);
        let shape2 = Conv1dShape {
            c_out: 2 * taps,
            ..shape1
        };
        let (w2, b2) = (p.get("g.conv2.w").clone(), p.get("g.conv2.b").clone());
        let crf = b.conv1d(&z, &w2, &b2, shape2);
        let start = frames.len().saturating_sub(cfg.crf_time_taps);
        let history: Vec<&[Complex64]> = frames[start..]
            .iter()
            .map(|f| f.reference.as_slice())
            .collect();
        let xh = apply_crf(b, &crf, gather_reference(cfg, &history), taps, nb);
        Self::gather(b, &xh, &self.expand_c)
    }

    /// `t(·)`: recurrent refinement of the candidate state.
    fn transition<B: Backend>(
        &self,
        b: &mut B,
        p: &Params<B::T>,
        st: &mut NkState<B::T>,
        wc: &B::T,
    ) -> B::T {
        let cfg = &self.model;
        let (nb, th) = (cfg.n_bins, cfg.t_lstm_hidden);
        let half = Self::gather(b, wc, &self.half);
        let x = linear(b, p, "t.in", &half, 2 * nb, th);
        st.t_cell = lstm_cell(b, p, "t.cell", &x, &st.t_cell, th, th);
        let h = st.t_cell.h.clone();
        let re = linear(b, p, "t.out_re", &h, th, nb);
        let im = linear(b, p, "t.out_im", &h, th, nb);
        let out = b.complex(&re, &im);
        let out = b.scale(&out, cfg.t_output_scale);
        let full = Self::gather(b, &out, &self.expand_c);
        let w = match cfg.t_form {
            TransitionForm::Direct => full,
            TransitionForm::Additive => b.add(wc, &full),
            TransitionForm::Multiplicative => {
                let delta = b.cmul(wc, &full);
                b.add(wc, &delta)
            }
        };
        b.project(&w, &self.mask_first)
    }

    /// Multiplicative covariance corrections, one per head.
    fn covariance_gains<B: Backend>(
        &self,
        b: &mut B,
        p: &Params<B::T>,
        st: &mut NkState<B::T>,
        s_hat: &B::T,
        w_new: &B::T,
    ) -> [B::T; 2] {
        let cfg = &self.model;
        let (nb, q) = (cfg.n_bins, cfg.psi_lstm_hidden);
        let sh = Self::gather(b, s_hat, &self.half);
        let wh = Self::gather(b, w_new, &self.half);
        let input = b.concat(&[sh, wh]);
        let mut out = Vec::with_capacity(2);
        for (i, head) in ["psi_vv", "psi_dd"].iter().enumerate() {
            let x = linear(b, p, &format!("{head}.in"), &input, 4 * nb, q);
            st.psi_cells[i] = lstm_cell(b, p, &format!("{head}.cell"), &x, &st.psi_cells[i], q, q);
            let h = st.psi_cells[i].h.clone();
            let o = linear(b, p, &format!("{head}.out"), &h, q, nb);
            let g = b.softplus(&o);
            out.push(Self::gather(b, &g, &self.expand_r));
        }
        let dd = out.pop().expect("two heads");
        let vv = out.pop().expect("two heads");
        [vv, dd]
    }

    /// One frame. `frames` ends with the current frame and holds up to
    /// `T_c - 1` earlier ones.
    pub fn step<B: Backend>(
        &self,
        b: &mut B,
        p: &Params<B::T>,
        st: &mut NkState<B::T>,
        frames: &[FrameInputs],
    ) -> Result<StepOutput<B::T>> {
        let cur = frames
            .last()
            .ok_or_else(|| Error::Config("step needs at least the current frame".into()))?;
        let m = self.model.block.fft_size;
        let r = self.model.block.hop;
        let hooks = self.hooks;
        let frame = st.frame;

        let h = if hooks.uses_trunk() {
            Some(self.trunk(b, p, st, &cur.features))
        } else {
            None
        };
        let x = match (&h, hooks.g) {
            (Some(h), true) => self.farend_estimate(b, p, h, frames),
            _ => b.constant(split(&cur.x)),
        };
        let a = match (&h, hooks.a) {
            (Some(h), true) => {
                let (w, bias) = (p.get("a.w").clone(), p.get("a.b").clone());
                let z = b.linear(&w, &bias, h, 1, self.model.lstm_hidden);
                b.sigmoid(&z)
            }
            _ => b.constant(vec![self.fdkf.a_default]),
        };
        let y = b.constant(split(&cur.y));

        // Measurement.
        let echo = b.cmul(&x, &st.w);
        let echo = b.project(&echo, &self.mask_last);
        let s = b.sub(&y, &echo);
        let s_time = b.ifft(&s);
        let out = b.slice(&s_time, r, r);

        // Gain.
        let x2 = b.cabs2(&x);
        let xp = b.mul(&x2, &st.p);
        let psi2 = b.scale(&st.psi_vv, 2.0);
        let den = b.add(&xp, &psi2);
        let den = b.offset(&den, self.fdkf.regularizer);
        let ratio = b.div(&st.p, &den);
        let xc = b.conj(&x);
        let k = b.cscale(&xc, &ratio);

        // State update.
        let ks = b.cmul(&k, &s);
        let dw = b.project(&ks, &self.mask_update);
        let wsum = b.add(&st.w, &dw);
        let wc = b.mul_scalar(&wsum, &a);
        let w_new = if hooks.t {
            self.transition(b, p, st, &wc)
        } else {
            wc
        };

        let gamma = self.fdkf.psi_dd_smoothing;
        let w_old2 = b.cabs2(&st.w);
        let wp_old = b.scale(&st.w_power, gamma);
        let wp_in = b.scale(&w_old2, 1.0 - gamma);
        let w_power = b.add(&wp_old, &wp_in);
        let a2 = b.square(&a);
        let neg_a2 = b.neg(&a2);
        let one_minus_a2 = b.offset(&neg_a2, 1.0);
        let dd = b.mul_scalar(&w_power, &one_minus_a2);
        let beta = self.fdkf.psi_smoothing;
        let s2 = b.cabs2(&s);
        let vv_old = b.scale(&st.psi_vv, beta);
        let vv_in = b.scale(&s2, 1.0 - beta);
        let vv = b.add(&vv_old, &vv_in);
        let (vv, dd) = if hooks.psi {
            let [gv, gd] = self.covariance_gains(b, p, st, &s, &w_new);
            (b.mul(&gv, &vv), b.mul(&gd, &dd))
        } else {
            (vv, dd)
        };
        let kx = b.cmul(&k, &x);
        let kx_re = b.slice(&kx, 0, m);
        let half_kx = b.scale(&kx_re, -0.5);
        let shrink = b.offset(&half_kx, 1.0);
        let p_new = b.mul(&shrink, &st.p);
        let p_new = b.mul_scalar(&p_new, &a2);
        let p_new = b.add(&p_new, &dd);
        let p_new = b.relu(&p_new);
        let psi_new = b.relu(&vv);

        check_finite(b, &w_new, frame, "filter estimate")?;
        check_finite(b, &p_new, frame, "covariance")?;
        check_finite(b, &psi_new, frame, "covariance")?;
        check_finite(b, &out, frame, "output")?;

        let a_value = b.scalar(&a);
        let s_hat = Self::gather(b, &s, &self.half);
        st.w = w_new;
        st.p = p_new;
        st.psi_vv = psi_new;
        st.w_power = w_power;
        st.frame += 1;
        Ok(StepOutput {
            out,
            s_hat,
            a: a_value,
        })
    }

    /// Unrolls over prepared frames.
    pub fn run<B: Backend>(
        &self,
        b: &mut B,
        p: &Params<B::T>,
        frames: &[FrameInputs],
    ) -> Result<RunOutput<B::T>> {
        let mut st = self.init_state(b);
        let tc = self.model.crf_time_taps;
        let mut out = RunOutput {
            blocks: Vec::with_capacity(frames.len()),
            spectra: Vec::with_capacity(frames.len()),
            a_trace: Vec::with_capacity(frames.len()),
        };
        for k in 0..frames.len() {
            let start = (k + 1).saturating_sub(tc);
            let o = self.step(b, p, &mut st, &frames[start..=k])?;
            out.blocks.push(o.out);
            out.spectra.push(o.s_hat);
            out.a_trace.push(o.a);
        }
        Ok(out)
    }

    /// Inference over whole signals with the plain backend.
    pub fn process(
        &self,
        weights: &ModelWeights,
        far: &[f64],
        mic: &[f64],
    ) -> Result<(Vec<f64>, Vec<f64>)> {
        weights.validate(&self.model)?;
        let frames = Frontend::prepare(&self.model, far, mic)?;
        let mut b = Eval::new();
        let p = Params::new(&mut b, weights);
        let run = self.run(&mut b, &p, &frames)?;
        let mut out: Vec<f64> = run.blocks.iter().flat_map(|v| v.iter().copied()).collect();
        out.truncate(far.len());
        Ok((out, run.a_trace))
    }
}

/// `[re; im]` of a complex vector.
pub fn split(c: &[Complex64]) -> Vec<f64> {
    c.iter()
        .map(|v| v.re)
        .chain(c.iter().map(|v| v.im))
        .collect()
}

/// Streaming canceller around [`NeuralKalman`] for the evaluation harness.
pub struct NeuralCanceller {
    nk: NeuralKalman,
    backend: Eval,
    params: Params<Rc<Vec<f64>>>,
    state: NkState<Rc<Vec<f64>>>,
    frontend: Frontend,
    history: Vec<FrameInputs>,
    plan: FftPlan,
}

impl NeuralCanceller {
    pub fn new(nk: NeuralKalman, weights: &ModelWeights) -> Result<Self> {
        weights.validate(&nk.model)?;
        let mut backend = Eval::new();
        let params = Params::new(&mut backend, weights);
        let state = nk.init_state(&mut backend);
        Ok(Self {
            frontend: Frontend::new(&nk.model)?,
            plan: FftPlan::new(nk.model.block.fft_size)?,
            nk,
            backend,
            params,
            state,
            history: Vec::new(),
        })
    }
}

impl Canceller for NeuralCanceller {
    fn hop(&self) -> usize {
        self.nk.model.block.hop
    }

    fn process_block(&mut self, far: &[f64], mic: &[f64]) -> Result<BlockOutput> {
        let inputs = self.frontend.push(far, mic)?;
        self.history.push(inputs);
        let tc = self.nk.model.crf_time_taps;
        if self.history.len() > tc {
            self.history.remove(0);
        }
        let o = self.nk.step(
            &mut self.backend,
            &self.params,
            &mut self.state,
            &self.history,
        )?;
        Ok(BlockOutput {
            samples: o.out.to_vec(),
            a: Some(o.a),
        })
    }

    fn impulse_response(&self) -> Vec<f64> {
        let m = self.nk.model.block.fft_size;
        let w = &self.state.w;
        let spec: Vec<Complex64> = (0..m).map(|i| Complex64::new(w[i], w[m + i])).collect();
        let mut h = self.plan.inverse_real(&spec);
        h.truncate(self.nk.model.block.hop);
        h
    }
}
