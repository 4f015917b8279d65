use std::path::PathBuf;

use nkaec::autodiff::{primitive_grad_checks, GradCheckReport, PrimitiveCheck};
use nkaec::training::{model_grad_check, GradCheckConfig};
use nkaec::{Error, Result};
use serde::Serialize;

use crate::common::{load_config, log_config, write_text};

#[derive(clap::Args)]
pub struct Args {
    /// JSON config for the full-model check (model, variant, frames,
    /// probes, step, stencil, floor, perturb, seed, loss).
    #[arg(long)]
    config: Option<PathBuf>,
    /// Report JSON with every primitive and every probed model coordinate.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Largest accepted relative error of the full model.
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
    /// Largest accepted relative error of a single primitive.
    #[arg(long, default_value_t = 1e-6)]
    primitive_tolerance: f64,
}

#[derive(Serialize)]
struct Report {
    primitives: Vec<PrimitiveCheck>,
    model: GradCheckReport,
}

pub fn run(args: Args, seed: Option<u64>) -> Result<()> {
    let mut cfg: GradCheckConfig = load_config(args.config.as_deref())?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    log_config("gradcheck", &cfg)?;
    let primitives = primitive_grad_checks()?;
    let worst_prim = primitives
        .iter()
        .max_by(|a, b| a.max_rel_err.total_cmp(&b.max_rel_err))
        .cloned();
    let model = model_grad_check(&cfg)?;
    if let Some(w) = &worst_prim {
        println!(
            "primitives {} max_rel_err {:.3e} ({})",
            primitives.len(),
            w.max_rel_err,
            w.primitive
        );
    }
    println!(
        "model probes {} non_smooth {} max_rel_err {:.3e}{}",
        model.entries.len(),
        model.non_smooth,
        model.max_rel_err,
        model
            .worst()
            .map_or(String::new(), |w| format!(" at {}[{}]", w.param, w.index))
    );
    let prim_err = worst_prim.map_or(0.0, |w| w.max_rel_err);
    let model_err = model.max_rel_err;
    if let Some(path) = &args.report {
        write_text(
            path,
            &serde_json::to_string_pretty(&Report { primitives, model })?,
        )?;
    }
    if !(prim_err <= args.primitive_tolerance) {
        return Err(Error::Autodiff(format!(
            "primitive relative error {prim_err:.3e} exceeds {:.1e}",
            args.primitive_tolerance
        )));
    }
    if !(model_err <= args.tolerance) {
        return Err(Error::Autodiff(format!(
            "model relative error {model_err:.3e} exceeds {:.1e}",
            args.tolerance
        )));
    }
    Ok(())
}
