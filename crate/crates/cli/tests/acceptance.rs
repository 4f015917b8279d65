//! End-to-end acceptance checks. Each test prints one `PASS`/`FAIL` line with
//! the measured quantity next to its threshold. Tests run one at a time so
//! the reported runtimes are not inflated by each other.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::{Mutex, MutexGuard};
use std::time::Instant;

use nkaec::autodiff::{primitive_grad_checks, Backend, Eval};
use nkaec::filters::{Fdkf, FdkfConfig, HookedFdkf, Nlms, NlmsConfig, ScheduledA};
use nkaec::metrics::{evaluate, RECONVERGENCE_DB};
use nkaec::neural::{HookSet, ModelConfig, ModelWeights, NeuralKalman, Params, Variant};
use nkaec::scene::{render_scene, RandomSceneConfig, SourceSpec};
use nkaec::signal::{BlockConfig, FftPlan, Half};
use nkaec::training::{
    build_examples, example_loss, model_grad_check, score_examples, train_loop, GradCheckConfig,
    LossConfig, TrainConfig, Trainer, TrainingExample,
};
use nkaec::Error;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Writes to the stdout handle directly so the line shows even when the test
/// harness captures output.
fn report(id: u32, name: &str, pass: bool, detail: String) {
    let mut out = std::io::stdout().lock();
    let _ = writeln!(
        out,
        "\n[{id:>2}] {name}: {} ({detail})",
        if pass { "PASS" } else { "FAIL" }
    );
    let _ = out.flush();
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn linear_scene(duration_s: f64, hop: usize) -> RandomSceneConfig {
    RandomSceneConfig {
        duration_s,
        farend: SourceSpec::White { rms: 0.1 },
        nearend: SourceSpec::Silence,
        rt60: [0.2, 0.4],
        truncate: Some(hop),
        ..Default::default()
    }
}

#[test]
fn overlap_save_exactness() {
    let _guard = serial();
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for case in 0..100 {
        let r = [8, 16, 32, 64][case % 4];
        let m = 2 * r;
        let plan = FftPlan::new(m).unwrap();
        let h: Vec<f64> = (0..r).map(|_| rng.random_range(-1.0..1.0)).collect();
        let x: Vec<f64> = (0..4 * r).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut hp = h.clone();
        hp.resize(m, 0.0);
        let w = plan.forward_real(&hp);
        for k in 1..4 {
            let window = &x[(k - 1) * r..(k + 1) * r];
            let xf = plan.forward_real(window);
            let prod: Vec<_> = xf.iter().zip(&w).map(|(a, b)| a * b).collect();
            let y = plan.project(&prod, Half::Last);
            let yt = plan.inverse_real(&y);
            for n in 0..r {
                let t = k * r + n;
                let direct: f64 = (0..r).map(|j| h[j] * x[t - j]).sum();
                worst = worst.max((yt[r + n] - direct).abs());
            }
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst <= 1e-10 && secs < 1.0;
    report(
        1,
        "overlap-save exactness",
        pass,
        format!("max err {worst:.2e} <= 1e-10, {secs:.2}s < 1s"),
    );
    assert!(pass);
}

#[test]
fn fdkf_convergence() {
    let _guard = serial();
    let t0 = Instant::now();
    let block = BlockConfig::DEFAULT_16K;
    let spec = linear_scene(8.0, block.hop).sample(21).unwrap();
    let scene = spec.build().unwrap();
    let rendered = render_scene(&scene).unwrap();
    let mut f = Fdkf::new(FdkfConfig::with_block(block)).unwrap();
    let rep = evaluate(&scene, &rendered, &mut f).unwrap();
    let frames = rep.frames.min(500);
    let best = rep.misalignment_curve[..frames]
        .iter()
        .cloned()
        .fold(f64::INFINITY, f64::min);
    let secs = t0.elapsed().as_secs_f64();
    let pass = best <= -20.0 && rep.final_erle >= 20.0 && secs < 10.0;
    report(
        2,
        "classical FDKF convergence",
        pass,
        format!(
            "misalignment {best:.1} dB <= -20 within {frames} frames, final ERLE {:.1} dB >= 20, {secs:.1}s",
            rep.final_erle
        ),
    );
    assert!(pass);
}

#[test]
fn double_talk_robustness() {
    let _guard = serial();
    let t0 = Instant::now();
    let block = BlockConfig::DEFAULT_16K;
    let cfg = RandomSceneConfig {
        nearend: SourceSpec::White { rms: 0.1 },
        ser_db: [0.0, 0.0],
        ..linear_scene(8.0, block.hop)
    };
    let (mut kalman, mut nlms) = (Vec::new(), Vec::new());
    for seed in 0..10 {
        let scene = cfg.sample(100 + seed).unwrap().build().unwrap();
        let rendered = render_scene(&scene).unwrap();
        let mut f = Fdkf::new(FdkfConfig::with_block(block)).unwrap();
        let mut n = Nlms::new(NlmsConfig {
            block,
            mu: 0.5,
            ..Default::default()
        })
        .unwrap();
        kalman.push(
            *evaluate(&scene, &rendered, &mut f)
                .unwrap()
                .misalignment_curve
                .last()
                .unwrap(),
        );
        nlms.push(
            *evaluate(&scene, &rendered, &mut n)
                .unwrap()
                .misalignment_curve
                .last()
                .unwrap(),
        );
    }
    let (mk, mn) = (median(kalman), median(nlms));
    let secs = t0.elapsed().as_secs_f64();
    let pass = mn - mk >= 6.0 && secs < 60.0;
    report(
        3,
        "double-talk robustness",
        pass,
        format!(
            "median misalignment FDKF {mk:.1} dB vs NLMS {mn:.1} dB, gap {:.1} >= 6, {secs:.1}s",
            mn - mk
        ),
    );
    assert!(pass);
}

#[test]
fn transition_factor_dip_reconverges_faster() {
    let _guard = serial();
    let t0 = Instant::now();
    let block = BlockConfig::DEFAULT_16K;
    let cfg = RandomSceneConfig {
        path_change_at: Some(0.5),
        ..linear_scene(8.0, block.hop)
    };
    let mut wins = 0;
    let mut details = Vec::new();
    for seed in 0..10 {
        let scene = cfg.sample(200 + seed).unwrap().build().unwrap();
        let rendered = render_scene(&scene).unwrap();
        let change = scene.rir_schedule[1].0 / block.hop;
        let frames = rendered.mic.len().div_ceil(block.hop);
        let mut schedule = vec![0.999; frames];
        schedule[change..change + 5]
            .iter_mut()
            .for_each(|a| *a = 0.3);
        let cfgk = FdkfConfig::with_block(block);
        let mut fixed = Fdkf::new(cfgk).unwrap();
        let mut dip = HookedFdkf::new(Fdkf::new(cfgk).unwrap(), ScheduledA::new(schedule));
        let rf = evaluate(&scene, &rendered, &mut fixed).unwrap();
        let rd = evaluate(&scene, &rendered, &mut dip).unwrap();
        let tf = rf.reconvergence_time.unwrap_or(usize::MAX);
        let td = rd.reconvergence_time.unwrap_or(usize::MAX);
        if td < tf {
            wins += 1;
        }
        details.push(format!("{td}/{tf}"));
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = wins == 10 && secs < 60.0;
    report(
        6,
        "transition-factor dip",
        pass,
        format!("dip faster on {wins}/10 seeds (dip/fixed frames to {RECONVERGENCE_DB} dB: {}), {secs:.1}s", details.join(" ")),
    );
    assert!(pass);
}

#[test]
fn gradient_fidelity() {
    let _guard = serial();
    let t0 = Instant::now();
    let prims = primitive_grad_checks().unwrap();
    let worst_prim = prims
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .unwrap();
    let model = model_grad_check(&GradCheckConfig::default()).unwrap();
    let worst = model.worst().unwrap();
    let secs = t0.elapsed().as_secs_f64();
    let pass = worst_prim.max_rel_err <= 1e-6
        && model.entries.len() == 100
        && model.max_rel_err <= 1e-4
        && secs < 120.0;
    report(
        4,
        "gradient fidelity",
        pass,
        format!(
            "{} primitives max {:.2e} ({}) <= 1e-6; full model {} probes max {:.2e} ({}[{}]) <= 1e-4; {secs:.1}s",
            prims.len(),
            worst_prim.max_rel_err,
            worst_prim.primitive,
            model.entries.len(),
            model.max_rel_err,
            worst.param,
            worst.index
        ),
    );
    assert!(pass);
}

fn naive_si_sdr(s: &[f64], e: &[f64]) -> f64 {
    let n = s.len() as f64;
    let ms = s.iter().sum::<f64>() / n;
    let me = e.iter().sum::<f64>() / n;
    let s: Vec<f64> = s.iter().map(|v| v - ms).collect();
    let e: Vec<f64> = e.iter().map(|v| v - me).collect();
    let dot: f64 = s.iter().zip(&e).map(|(a, b)| a * b).sum();
    let ss: f64 = s.iter().map(|v| v * v).sum();
    let proj: Vec<f64> = s.iter().map(|v| dot / ss * v).collect();
    let num: f64 = proj.iter().map(|v| v * v).sum();
    let den: f64 = proj.iter().zip(&e).map(|(p, v)| (p - v) * (p - v)).sum();
    10.0 * ((num + 1e-12) / (den + 1e-12)).log10()
}

/// `|DFT([0_R; block])|` for bins `0..=R` by direct summation.
fn naive_magnitudes(block: &[f64]) -> Vec<f64> {
    let r = block.len();
    (0..=r)
        .map(|k| {
            let (mut re, mut im) = (0.0, 0.0);
            for (n, &x) in block.iter().enumerate() {
                let ang = -std::f64::consts::PI * (k * (n + r)) as f64 / r as f64;
                re += x * ang.cos();
                im += x * ang.sin();
            }
            re.hypot(im)
        })
        .collect()
}

fn efficacy_scenes(duration_s: f64) -> RandomSceneConfig {
    RandomSceneConfig {
        duration_s,
        truncate: Some(32),
        distance: [0.1, 0.5],
        clip_range: Some([0.05, 0.2]),
        ..Default::default()
    }
}

#[test]
fn loss_definition() {
    let _guard = serial();
    let default_cfg: TrainConfig = serde_json::from_str("{}").unwrap();
    let alpha = default_cfg.loss.alpha;

    let model = ModelConfig::desk();
    let loss_cfg = LossConfig::default();
    let nk = NeuralKalman::for_model(model, Variant::GPsiTA.hooks()).unwrap();
    let examples = build_examples(&model, &efficacy_scenes(1.0), 9, 0, 3).unwrap();
    let mut worst = 0.0f64;
    for (i, ex) in examples.iter().enumerate() {
        let weights = ModelWeights::init(&model, i as u64).unwrap();
        let mut b = Eval::new();
        let p = Params::new(&mut b, &weights);
        let fwd = example_loss(&mut b, &nk, &p, ex, &loss_cfg).unwrap();
        let loss = b.scalar(&fwd.loss);
        let r = model.block.hop;
        let est: Vec<f64> = fwd.estimate.chunks(r).flat_map(naive_magnitudes).collect();
        let tgt: Vec<f64> = ex.target.chunks(r).flat_map(naive_magnitudes).collect();
        let mae = est
            .iter()
            .zip(&tgt)
            .map(|(a, b)| (a - b).abs())
            .sum::<f64>()
            / est.len() as f64;
        let sdr = naive_si_sdr(&ex.target, &fwd.estimate).min(loss_cfg.si_sdr_cap);
        let oracle = alpha * mae - sdr;
        worst = worst.max((loss - oracle).abs() / oracle.abs().max(1.0));
    }
    let pass = worst <= 1e-12 && alpha == 10_000.0;
    report(
        5,
        "loss definition",
        pass,
        format!("recomputation rel err {worst:.2e} <= 1e-12 on 3 examples; alpha from empty config = {alpha}"),
    );
    assert!(pass);
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

#[test]
fn desk_training_efficacy() {
    let _guard = serial();
    let t0 = Instant::now();
    let cfg = TrainConfig {
        variant: Variant::GTA,
        seed: 1,
        train_scenes: 64,
        batch_size: 4,
        epochs: 32,
        max_steps: Some(500),
        scenes: efficacy_scenes(2.0),
        ..Default::default()
    };
    let out = train_loop(&cfg, 1, None, |_| {}).unwrap();
    let held_out = build_examples(&cfg.model, &cfg.scenes, 2, 0, 16).unwrap();
    let init = ModelWeights::init(&cfg.model, cfg.seed).unwrap();
    let classical =
        mean(&score_examples(&cfg.model, HookSet::NONE, &init, &held_out, &cfg.loss).unwrap());
    let neural = mean(
        &score_examples(
            &cfg.model,
            cfg.variant.hooks(),
            &out.weights,
            &held_out,
            &cfg.loss,
        )
        .unwrap(),
    );

    let single = build_examples(&cfg.model, &efficacy_scenes(1.0), 3, 0, 1).unwrap();
    let mut trainer = Trainer::new(cfg.clone(), init, 1).unwrap();
    let batch: Vec<&TrainingExample> = vec![&single[0]];
    let losses: Vec<f64> = (0..50)
        .map(|_| trainer.train_step(&batch).unwrap().loss)
        .collect();
    let smooth: Vec<f64> = losses.chunks(10).map(mean).collect();
    let decreasing = smooth.windows(2).all(|w| w[1] < w[0]);

    let secs = t0.elapsed().as_secs_f64();
    let gain = neural - classical;
    let pass = gain >= 1.0 && decreasing && out.curve.len() == 500 && secs < 1800.0;
    let smooth_txt: Vec<String> = smooth.iter().map(|v| format!("{v:.1}")).collect();
    report(
        7,
        "desk training efficacy",
        pass,
        format!(
            "held-out SI-SDR g_t_A {neural:.2} dB vs FDKF {classical:.2} dB, gain {gain:.2} >= 1 after {} steps; \
             overfit 10-step means [{}] strictly decreasing; {secs:.0}s",
            out.curve.len(),
            smooth_txt.join(", ")
        ),
    );
    assert!(pass);
}

/// Trailing mean over full windows of `w` steps; entry `i` ends at step
/// `i + w`.
fn trailing_mean(v: &[f64], w: usize) -> Vec<f64> {
    v.windows(w).map(mean).collect()
}

#[test]
fn transition_head_speeds_up_training() {
    let _guard = serial();
    let t0 = Instant::now();
    let steps = 300;
    let mut wins = 0;
    let mut details = Vec::new();
    for seed in 0..3u64 {
        let base = TrainConfig {
            seed,
            train_scenes: 32,
            batch_size: 2,
            epochs: 19,
            max_steps: Some(steps),
            scenes: efficacy_scenes(1.0),
            ..Default::default()
        };
        let curve = |variant| {
            let cfg = TrainConfig {
                variant,
                ..base.clone()
            };
            let out = train_loop(&cfg, 1, None, |_| {}).unwrap();
            trailing_mean(&out.curve.iter().map(|r| r.loss).collect::<Vec<_>>(), 25)
        };
        let ga = curve(Variant::GA);
        let gta = curve(Variant::GTA);
        let window = steps - ga.len() + 1;
        let target = ga[ga.len() - 1];
        let reached = gta.iter().position(|&l| l <= target).map(|k| k + window);
        if reached.is_some_and(|k| k <= steps) {
            wins += 1;
        }
        details.push(format!(
            "seed {seed}: g_A@{steps} {target:.1}, g_t_A reaches it at {}",
            reached.map_or("never".into(), |k| format!("step {k}"))
        ));
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = wins >= 2;
    report(
        8,
        "t(.) convergence trend (not gated)",
        pass,
        format!(
            "{wins}/3 seeds reach g_A's step-{steps} loss within {steps} steps ({}), 25-step trailing mean, {secs:.0}s",
            details.join("; ")
        ),
    );
}

fn nkaec(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_nkaec"))
        .args(args)
        .env_remove("NK_SEED")
        .output()
        .unwrap()
}

fn files(dir: &Path) -> Vec<PathBuf> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in std::fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push(p.strip_prefix(dir).unwrap().to_path_buf());
            }
        }
    }
    out.sort();
    out
}

/// Drops the wall-clock column of a training curve.
fn without_wall_time(text: &str) -> String {
    text.lines()
        .map(|l| l.rsplit_once(',').map_or(l, |(head, _)| head))
        .collect::<Vec<_>>()
        .join("\n")
}

fn run_all_commands(root: &Path, tag: &str, shared: &Path) -> Vec<String> {
    let dir = root.join(tag);
    std::fs::create_dir_all(&dir).unwrap();
    let d = |name: &str| dir.join(name).to_string_lossy().into_owned();
    let s = |name: &str| shared.join(name).to_string_lossy().into_owned();
    let mut stdout = Vec::new();
    let mut call = |args: Vec<String>| {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let o = nkaec(&refs);
        assert!(
            o.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&o.stderr)
        );
        stdout.push(String::from_utf8(o.stdout).unwrap());
    };
    let v = |xs: &[&str]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>();
    call(v(&[
        "--seed",
        "7",
        "simulate",
        "--config",
        &s("sim.json"),
        "--out",
        &d("sim"),
    ]));
    call(v(&[
        "--seed",
        "7",
        "train",
        "--config",
        &s("train.json"),
        "--out",
        &d("w.nkw"),
    ]));
    let mic = s("sim/scene_000/mic.wav");
    let far = s("sim/scene_000/farend.wav");
    for algo in ["nlms", "fdkf"] {
        call(v(&[
            "process",
            "--algo",
            algo,
            "--in",
            &mic,
            "--farend",
            &far,
            "--out",
            &d(&format!("{algo}.wav")),
            "--trace",
            &d(&format!("{algo}.csv")),
        ]));
    }
    call(v(&[
        "process",
        "--algo",
        "neuralkalman",
        "--weights",
        &s("w.nkw"),
        "--in",
        &mic,
        "--farend",
        &far,
        "--out",
        &d("nk.wav"),
        "--trace",
        &d("nk.csv"),
    ]));
    call(v(&[
        "--seed",
        "7",
        "eval",
        "--algo",
        "neuralkalman",
        "--weights",
        &s("w.nkw"),
        "--config",
        &s("eval.json"),
        "--report",
        &d("eval.json"),
        "--csv",
        &d("eval.csv"),
    ]));
    call(v(&[
        "--seed",
        "7",
        "gradcheck",
        "--config",
        &s("gc.json"),
        "--report",
        &d("gc.json"),
    ]));
    stdout
}

#[test]
fn commands_are_deterministic() {
    let _guard = serial();
    let t0 = Instant::now();
    let tmp = tempfile::tempdir().unwrap();
    let shared = tmp.path().join("shared");
    std::fs::create_dir_all(&shared).unwrap();
    let write = |name: &str, text: &str| std::fs::write(shared.join(name), text).unwrap();
    let scenes =
        r#"{"duration_s": 0.5, "truncate": 32, "distance": [0.1, 0.5], "clip_range": [0.05, 0.2]}"#;
    write(
        "sim.json",
        &format!(r#"{{"count": 2, "random": {scenes}}}"#),
    );
    write(
        "train.json",
        &format!(
            r#"{{"train_scenes": 4, "batch_size": 2, "epochs": 1, "checkpoint_every": 1, "scenes": {scenes}}}"#
        ),
    );
    write(
        "eval.json",
        &format!(r#"{{"count": 2, "random": {scenes}}}"#),
    );
    write("gc.json", r#"{"frames": 4, "probes": 10}"#);
    // Inputs for process/eval come from a first pass so both compared runs
    // read identical files.
    let o = nkaec(&[
        "--seed",
        "7",
        "simulate",
        "--config",
        &shared.join("sim.json").to_string_lossy(),
        "--out",
        &shared.join("sim").to_string_lossy(),
    ]);
    assert!(o.status.success());
    let o = nkaec(&[
        "--seed",
        "7",
        "train",
        "--config",
        &shared.join("train.json").to_string_lossy(),
        "--out",
        &shared.join("w.nkw").to_string_lossy(),
    ]);
    assert!(o.status.success());

    let out_a = run_all_commands(tmp.path(), "a", &shared);
    let out_b = run_all_commands(tmp.path(), "b", &shared);
    let (fa, fb) = (files(&tmp.path().join("a")), files(&tmp.path().join("b")));
    let mut mismatched = Vec::new();
    for f in &fa {
        let (a, b) = (
            std::fs::read(tmp.path().join("a").join(f)).unwrap(),
            std::fs::read(tmp.path().join("b").join(f)),
        );
        let same = match b {
            Ok(b) if f.to_string_lossy().ends_with(".curve.csv") => {
                without_wall_time(&String::from_utf8_lossy(&a))
                    == without_wall_time(&String::from_utf8_lossy(&b))
            }
            Ok(b) => a == b,
            Err(_) => false,
        };
        if !same {
            mismatched.push(f.display().to_string());
        }
    }
    let secs = t0.elapsed().as_secs_f64();
    let pass = fa == fb && mismatched.is_empty() && out_a == out_b && fa.len() >= 20;
    report(
        9,
        "determinism",
        pass,
        format!(
            "simulate/train/process x3/eval/gradcheck twice: {} files identical (curve wall_ms column excluded), \
             mismatches {mismatched:?}, stdout identical {}; {secs:.1}s",
            fa.len(),
            out_a == out_b
        ),
    );
    assert!(pass);
}

#[test]
fn weights_format_round_trip() {
    let _guard = serial();
    let tmp = tempfile::tempdir().unwrap();
    let mut identical = 0;
    let mut configs = 0;
    for (i, cfg) in [ModelConfig::desk(), ModelConfig::paper()]
        .into_iter()
        .enumerate()
    {
        configs += 1;
        let (a, b) = (
            tmp.path().join(format!("{i}a.nkw")),
            tmp.path().join(format!("{i}b.nkw")),
        );
        let w = ModelWeights::init(&cfg, 40 + i as u64).unwrap();
        w.save(&a).unwrap();
        ModelWeights::load(&a, &cfg).unwrap().save(&b).unwrap();
        if std::fs::read(&a).unwrap() == std::fs::read(&b).unwrap() {
            identical += 1;
        }
    }

    let cfg = ModelConfig::desk();
    let bytes = ModelWeights::init(&cfg, 3).unwrap().to_bytes();
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let mut corrupted = 0;
    let mut named = 0;
    let mut check = |data: &[u8]| {
        corrupted += 1;
        if matches!(ModelWeights::from_bytes(data, &cfg), Err(Error::Weights(_))) {
            named += 1;
        }
    };
    for cut in (0..bytes.len()).step_by(97) {
        check(&bytes[..cut]);
    }
    for _ in 0..200 {
        let mut bad = bytes.clone();
        let i = rng.random_range(0..bad.len());
        bad[i] ^= 1 << rng.random_range(0..8);
        check(&bad);
    }
    let mut extra = bytes.clone();
    extra.extend_from_slice(b"junk");
    check(&extra);

    let garbage = tmp.path().join("garbage.nkw");
    std::fs::write(&garbage, b"not a weights file").unwrap();
    let wav = tmp.path().join("x.wav");
    nkaec::wav::write_wav(
        &wav,
        &nkaec::signal::TimeSignal::new(vec![0.0; 320], 16_000).unwrap(),
    )
    .unwrap();
    let w = wav.to_string_lossy();
    let o = nkaec(&[
        "process",
        "--algo",
        "neuralkalman",
        "--weights",
        &garbage.to_string_lossy(),
        "--in",
        &w,
        "--farend",
        &w,
        "--out",
        &tmp.path().join("o.wav").to_string_lossy(),
    ]);
    let stderr = String::from_utf8_lossy(&o.stderr);
    let cli_ok = o.status.code() == Some(2) && stderr.contains("weights error");

    let pass = identical == configs && named == corrupted && cli_ok;
    report(
        10,
        "weights format round trip",
        pass,
        format!(
            "{identical}/{configs} configs byte-identical after save-load-save; {named}/{corrupted} corrupted \
             inputs give named weights errors; CLI exit {:?} on garbage file",
            o.status.code()
        ),
    );
    assert!(pass);
}
