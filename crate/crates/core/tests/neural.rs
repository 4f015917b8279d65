use nkaec::autodiff::{Backend, Conv1dShape, Eval};
use nkaec::filters::{Canceller, Fdkf, FdkfConfig};
use nkaec::neural::layers::{linear, lstm_cell, LstmState};
use nkaec::neural::{
    expected_shapes, Frontend, HookSet, ModelConfig, ModelWeights, NeuralCanceller, NeuralKalman,
    Params, Tensor, TransitionForm, Variant,
};
use nkaec::signal::{FftPlan, Half};
use nkaec::training::{model_grad_check, GradCheckConfig};
use nkaec::Error;
use num_complex::Complex64;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn echo_pair(n: usize, taps: usize, seed: u64) -> (Vec<f64>, Vec<f64>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let far: Vec<f64> = (0..n).map(|_| rng.random_range(-0.2..0.2)).collect();
    let h: Vec<f64> = (0..taps)
        .map(|j| rng.random_range(-0.5..0.5) * 0.8f64.powi(j as i32))
        .collect();
    let mic = (0..n)
        .map(|t| {
            let echo: f64 = (0..taps.min(t + 1)).map(|j| h[j] * far[t - j]).sum();
            echo + rng.random_range(-0.01..0.01)
        })
        .collect();
    (far, mic)
}

fn zero_weights(cfg: &ModelConfig) -> ModelWeights {
    let mut w = ModelWeights::init(cfg, 0).unwrap();
    for (_, t) in w.iter_mut() {
        t.data.iter_mut().for_each(|v| *v = 0.0);
    }
    w
}

#[test]
fn without_hooks_equals_classical_filter() {
    let cfg = ModelConfig::desk();
    let (far, mic) = echo_pair(40 * cfg.block.hop + 7, cfg.block.hop, 1);
    let nk = NeuralKalman::for_model(cfg, HookSet::NONE).unwrap();
    let weights = ModelWeights::init(&cfg, 3).unwrap();
    let (out, _) = nk.process(&weights, &far, &mic).unwrap();
    let mut fdkf = Fdkf::new(FdkfConfig::with_block(cfg.block)).unwrap();
    let classical = fdkf.process_plain(&far, &mic).unwrap();
    assert_eq!(out.len(), classical.len());
    let err = out
        .iter()
        .zip(&classical)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    assert!(err < 1e-10, "max difference {err:e}");
}

#[test]
fn streaming_canceller_matches_batch() {
    let cfg = ModelConfig::desk();
    let r = cfg.block.hop;
    let (far, mic) = echo_pair(12 * r, r, 2);
    let weights = ModelWeights::init(&cfg, 5).unwrap();
    let nk = NeuralKalman::for_model(cfg, Variant::GPsiTA.hooks()).unwrap();
    let (batch, a_batch) = nk.process(&weights, &far, &mic).unwrap();
    let mut c = NeuralCanceller::new(nk, &weights).unwrap();
    let mut stream = Vec::new();
    let mut a_stream = Vec::new();
    for (fb, mb) in far.chunks(r).zip(mic.chunks(r)) {
        let o = c.process_block(fb, mb).unwrap();
        stream.extend(o.samples);
        a_stream.push(o.a.unwrap());
    }
    assert_eq!(batch, stream);
    assert_eq!(a_batch, a_stream);
    assert_eq!(c.impulse_response().len(), r);
}

#[test]
fn paper_scale_forward_is_finite() {
    let cfg = ModelConfig::paper();
    let (far, mic) = echo_pair(100 * cfg.block.hop, 512, 3);
    let weights = ModelWeights::init(&cfg, 0).unwrap();
    let nk = NeuralKalman::for_model(cfg, Variant::GPsiTA.hooks()).unwrap();
    let (out, a) = nk.process(&weights, &far, &mic).unwrap();
    assert_eq!(a.len(), 100);
    assert!(out.iter().all(|v| v.is_finite()));
    assert!(a.iter().all(|&v| v > 0.0 && v < 1.0));
}

#[test]
fn transition_factor_head_range() {
    let cfg = ModelConfig::desk();
    let (far, mic) = echo_pair(20 * cfg.block.hop, 16, 4);
    let nk = NeuralKalman::for_model(cfg, Variant::GA.hooks()).unwrap();
    let (_, a) = nk.process(&zero_weights(&cfg), &far, &mic).unwrap();
    assert!(a.iter().all(|&v| v == 0.5));
    let (_, a) = nk
        .process(&ModelWeights::init(&cfg, 1).unwrap(), &far, &mic)
        .unwrap();
    assert!(a.iter().all(|&v| v > 0.99 && v < 1.0), "{a:?}");
    let mut big = zero_weights(&cfg);
    big.get_mut("a.b").unwrap().data[0] = 1e3;
    let (_, a) = nk.process(&big, &far, &mic).unwrap();
    assert!(a.iter().all(|&v| v == 1.0));
}

#[test]
fn zero_transition_weights_give_projected_bias() {
    let cfg = ModelConfig {
        t_form: TransitionForm::Direct,
        t_output_scale: 1.0,
        ..ModelConfig::desk()
    };
    let m = cfg.block.fft_size;
    let nb = cfg.n_bins;
    let mut w = zero_weights(&cfg);
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let re: Vec<f64> = (0..nb).map(|_| rng.random_range(-1.0..1.0)).collect();
    let im: Vec<f64> = (0..nb).map(|_| rng.random_range(-1.0..1.0)).collect();
    w.get_mut("t.out_re.b").unwrap().data = re.clone();
    w.get_mut("t.out_im.b").unwrap().data = im.clone();
    let nk = NeuralKalman::for_model(cfg, Variant::GT.hooks()).unwrap();
    let (far, mic) = echo_pair(cfg.block.hop, 8, 7);
    let frames = Frontend::prepare(&cfg, &far, &mic).unwrap();
    let mut b = Eval::new();
    let p = Params::new(&mut b, &w);
    let mut st = nk.init_state(&mut b);
    nk.step(&mut b, &p, &mut st, &frames).unwrap();

    let full: Vec<Complex64> = (0..m)
        .map(|j| {
            let (k, sign) = if j <= m / 2 { (j, 1.0) } else { (m - j, -1.0) };
            let imag = if j == 0 || j == m / 2 {
                0.0
            } else {
                sign * im[k]
            };
            Complex64::new(re[k], imag)
        })
        .collect();
    let expected = FftPlan::new(m).unwrap().project(&full, Half::First);
    for j in 0..m {
        assert!((st.w[j] - expected[j].re).abs() < 1e-12);
        assert!((st.w[m + j] - expected[j].im).abs() < 1e-12);
    }
}

#[test]
fn learned_covariances_stay_nonnegative() {
    let cfg = ModelConfig::desk();
    let mut w = ModelWeights::init(&cfg, 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    for name in [
        "psi_vv.out.w",
        "psi_vv.out.b",
        "psi_dd.out.w",
        "psi_dd.out.b",
    ] {
        w.get_mut(name)
            .unwrap()
            .data
            .iter_mut()
            .for_each(|v| *v = rng.random_range(-5.0..5.0));
    }
    let nk = NeuralKalman::for_model(cfg, Variant::GPsiA.hooks()).unwrap();
    let (far, mic) = echo_pair(30 * cfg.block.hop, 16, 9);
    let frames = Frontend::prepare(&cfg, &far, &mic).unwrap();
    let mut b = Eval::new();
    let p = Params::new(&mut b, &w);
    let mut st = nk.init_state(&mut b);
    for k in 0..frames.len() {
        let start = (k + 1).saturating_sub(cfg.crf_time_taps);
        nk.step(&mut b, &p, &mut st, &frames[start..=k]).unwrap();
        assert!(st.p.iter().all(|&v| v >= 0.0));
        assert!(st.psi_vv.iter().all(|&v| v >= 0.0));
    }
}

#[test]
fn zero_weight_lstm_outputs_zero() {
    let cfg = ModelConfig::desk();
    let w = zero_weights(&cfg);
    let mut b = Eval::new();
    let p = Params::new(&mut b, &w);
    let x = b.constant((0..cfg.t_lstm_hidden).map(|i| i as f64 - 3.0).collect());
    let mut st = LstmState::zeros(&mut b, cfg.t_lstm_hidden);
    for _ in 0..3 {
        st = lstm_cell(
            &mut b,
            &p,
            "t.cell",
            &x,
            &st,
            cfg.t_lstm_hidden,
            cfg.t_lstm_hidden,
        );
        assert!(st.h.iter().all(|&v| v == 0.0));
    }
}

#[test]
fn identity_linear_layer() {
    let cfg = ModelConfig::desk();
    let n = cfg.t_lstm_hidden;
    let mut w = zero_weights(&cfg);
    let t = w.get_mut("t.out_re.w").unwrap();
    assert_eq!(t.shape, vec![cfg.n_bins, n]);
    for i in 0..n {
        t.data[i * n + i] = 1.0;
    }
    let mut b = Eval::new();
    let p = Params::new(&mut b, &w);
    let input: Vec<f64> = (0..n).map(|i| (i as f64).sin()).collect();
    let x = b.constant(input.clone());
    let y = linear(&mut b, &p, "t.out_re", &x, n, cfg.n_bins);
    assert_eq!(&y[..n], &input[..]);
}

#[test]
fn conv1d_matches_sliding_window() {
    let x = [1.0, -2.0, 0.5, 3.0, 4.0];
    let k = [0.25, -1.0, 2.0];
    let mut b = Eval::new();
    let xv = b.constant(x.to_vec());
    let wv = b.constant(k.to_vec());
    let bv = b.constant(vec![0.5]);
    let shape = Conv1dShape {
        c_in: 1,
        c_out: 1,
        kernel: 3,
        len: 5,
    };
    let y = b.conv1d(&xv, &wv, &bv, shape);
    for t in 0..5 {
        let mut direct = 0.5;
        for j in 0..3 {
            let src = t as isize + j as isize - 1;
            if (0..5).contains(&src) {
                direct += k[j] * x[src as usize];
            }
        }
        assert!((y[t] - direct).abs() < 1e-15);
    }
}

#[test]
fn weights_round_trip_is_byte_identical() {
    let cfg = ModelConfig::desk();
    let dir = tempfile::tempdir().unwrap();
    let a = dir.path().join("a.nkw");
    let b = dir.path().join("b.nkw");
    let w = ModelWeights::init(&cfg, 11).unwrap();
    w.save(&a).unwrap();
    let loaded = ModelWeights::load(&a, &cfg).unwrap();
    assert_eq!(loaded, w);
    loaded.save(&b).unwrap();
    assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
}

#[test]
fn corrupted_weights_give_named_errors() {
    let cfg = ModelConfig::desk();
    let bytes = ModelWeights::init(&cfg, 0).unwrap().to_bytes();
    for cut in [0, 3, 10, 40, bytes.len() / 2, bytes.len() - 1] {
        let err = ModelWeights::from_bytes(&bytes[..cut], &cfg).unwrap_err();
        assert!(matches!(err, Error::Weights(_)), "{err}");
    }
    let mut bad = bytes.clone();
    bad[0] = b'X';
    assert!(ModelWeights::from_bytes(&bad, &cfg)
        .unwrap_err()
        .to_string()
        .contains("magic"));
    let mut extra = bytes.clone();
    extra.push(0);
    assert!(ModelWeights::from_bytes(&extra, &cfg)
        .unwrap_err()
        .to_string()
        .contains("trailing"));
    let mut flipped = bytes.clone();
    let mid = bytes.len() / 2;
    flipped[mid] ^= 0x10;
    let msg = ModelWeights::from_bytes(&flipped, &cfg)
        .unwrap_err()
        .to_string();
    assert!(
        msg.contains("checksum") || msg.contains("non-finite"),
        "{msg}"
    );

    let mut nan = ModelWeights::init(&cfg, 0).unwrap();
    nan.get_mut("a.b").unwrap().data[0] = f64::NAN;
    let msg = ModelWeights::from_bytes(&nan.to_bytes(), &cfg)
        .unwrap_err()
        .to_string();
    assert!(msg.contains("'a.b'") && msg.contains("non-finite"), "{msg}");

    let mut w = ModelWeights::init(&cfg, 0).unwrap();
    *w.get_mut("g.conv1.b").unwrap() = Tensor::zeros(vec![3]);
    let msg = ModelWeights::from_bytes(&w.to_bytes(), &cfg)
        .unwrap_err()
        .to_string();
    assert!(msg.contains("g.conv1.b"), "{msg}");

    let other = ModelConfig {
        lstm_hidden: 16,
        ..cfg
    };
    let msg = ModelWeights::from_bytes(&bytes, &other)
        .unwrap_err()
        .to_string();
    assert!(msg.contains("tensor 'a.w'"), "{msg}");
    assert_eq!(
        expected_shapes(&cfg).len(),
        ModelWeights::init(&cfg, 0).unwrap().names().len()
    );
}

#[test]
fn full_model_gradient_matches_finite_differences() {
    let report = model_grad_check(&GradCheckConfig::default()).unwrap();
    assert_eq!(report.entries.len(), 100);
    let worst = report.worst().unwrap();
    assert!(report.max_rel_err < 1e-4, "{worst:?}");
}
