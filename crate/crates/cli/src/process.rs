use std::path::PathBuf;

use nkaec::filters::run_canceller;
use nkaec::neural::Variant;
use nkaec::signal::TimeSignal;
use nkaec::wav::{read_wav, write_wav};
use nkaec::{Error, Result};

use crate::common::{
    load_config, log_config, parse_variant, write_text, Algo, AlgoConfig, CancellerPlan,
};

#[derive(clap::Args)]
pub struct Args {
    /// Cancellation algorithm.
    #[arg(long, value_enum)]
    algo: Algo,
    /// Learned components for neuralkalman: g, g_A, g_t, g_t_A, g_psi_A,
    /// g_psi_t_A or A. Defaults to the variant recorded with the weights.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Model weights (neuralkalman only). A `<weights>.json` sidecar, when
    /// present, supplies the model configuration.
    #[arg(long)]
    weights: Option<PathBuf>,
    /// JSON canceller config: {"fdkf", "nlms", "model"}.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Microphone WAV (16-bit PCM mono 16 kHz).
    #[arg(long = "in")]
    input: PathBuf,
    /// Far-end reference WAV (16-bit PCM mono 16 kHz).
    #[arg(long)]
    farend: PathBuf,
    /// Output WAV with the echo removed.
    #[arg(long)]
    out: PathBuf,
    /// Per-frame CSV `frame,in_db,out_db`, plus `a` when the transition
    /// factor is learned.
    #[arg(long)]
    trace: Option<PathBuf>,
}

fn level_db(x: &[f64]) -> f64 {
    let p = x.iter().map(|v| v * v).sum::<f64>() / x.len().max(1) as f64;
    10.0 * (p + 1e-12).log10()
}

pub fn trace_csv(mic: &[f64], out: &[f64], hop: usize, a: Option<&[f64]>) -> String {
    let mut s = String::from(if a.is_some() {
        "frame,in_db,out_db,a\n"
    } else {
        "frame,in_db,out_db\n"
    });
    for (k, (m, o)) in mic.chunks(hop).zip(out.chunks(hop)).enumerate() {
        s.push_str(&format!("{k},{},{}", level_db(m), level_db(o)));
        if let Some(a) = a {
            s.push_str(&format!(",{}", a[k]));
        }
        s.push('\n');
    }
    s
}

pub fn run(args: Args, _seed: Option<u64>) -> Result<()> {
    let cfg: AlgoConfig = load_config(args.config.as_deref())?;
    let plan = CancellerPlan::resolve(args.algo, args.variant, args.weights.as_deref(), cfg)?;
    log_config("process", &plan)?;
    let mic = read_wav(&args.input)?;
    let far = read_wav(&args.farend)?;
    if mic.len() != far.len() {
        return Err(Error::Config(format!(
            "microphone has {} samples but far-end has {}",
            mic.len(),
            far.len()
        )));
    }
    let mut canceller = plan.build()?;
    let trace = run_canceller(canceller.as_mut(), &far.samples, &mic.samples)?;
    write_wav(
        &args.out,
        &TimeSignal::new(trace.output.clone(), mic.sample_rate)?,
    )?;
    if let Some(path) = &args.trace {
        let a = plan.traces_a().then_some(trace.a.as_slice());
        write_text(
            path,
            &trace_csv(&mic.samples, &trace.output, canceller.hop(), a),
        )?;
    }
    Ok(())
}
