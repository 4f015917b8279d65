use std::path::{Path, PathBuf};

use nkaec::filters::{FdkfConfig, NlmsConfig};
use nkaec::metrics::{evaluate, EvalSummary};
use nkaec::neural::{ModelConfig, Variant};
use nkaec::scene::{render_scene, RandomSceneConfig, SceneSpec};
use nkaec::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::common::{
    load_config, log_config, parse_variant, write_text, Algo, AlgoConfig, CancellerPlan,
};
use crate::simulate::SimulateConfig;

#[derive(clap::Args)]
pub struct Args {
    /// Cancellation algorithm.
    #[arg(long, value_enum)]
    algo: Algo,
    /// Learned components for neuralkalman: g, g_A, g_t, g_t_A, g_psi_A,
    /// g_psi_t_A or A. Defaults to the variant recorded with the weights.
    #[arg(long, value_parser = parse_variant)]
    variant: Option<Variant>,
    /// Model weights (neuralkalman only).
    #[arg(long)]
    weights: Option<PathBuf>,
    /// JSON eval config: {"seed", "count", "scene" | "random", "fdkf",
    /// "nlms", "model"}.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene description JSON; replaces the config's scene.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Summary JSON with per-scene and mean metrics.
    #[arg(long)]
    report: Option<PathBuf>,
    /// Per-frame metrics CSV `frame,erle_db,misalign_db[,a]`. With several
    /// scenes, `_NNN` is inserted before the extension.
    #[arg(long)]
    csv: Option<PathBuf>,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalConfig {
    pub seed: u64,
    pub count: usize,
    pub scene: Option<SceneSpec>,
    pub random: Option<RandomSceneConfig>,
    pub fdkf: FdkfConfig,
    pub nlms: NlmsConfig,
    pub model: Option<ModelConfig>,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 1,
            scene: None,
            random: None,
            fdkf: FdkfConfig::default(),
            nlms: NlmsConfig::default(),
            model: None,
        }
    }
}

#[derive(Serialize)]
struct Report<'a> {
    plan: &'a CancellerPlan,
    scenes: Vec<EvalSummary>,
    mean_si_sdr_in: f64,
    mean_si_sdr_out: f64,
    mean_si_sdr_delta: f64,
    mean_final_erle: f64,
}

fn indexed(path: &Path, i: usize) -> PathBuf {
    let stem = path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let name = match path.extension() {
        Some(ext) => format!("{stem}_{i:03}.{}", ext.to_string_lossy()),
        None => format!("{stem}_{i:03}"),
    };
    path.with_file_name(name)
}

fn mean(v: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = v.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        f64::NAN
    } else {
        s / n as f64
    }
}

pub fn run(args: Args, seed: Option<u64>) -> Result<()> {
    let mut cfg: EvalConfig = load_config(args.config.as_deref())?;
    if let Some(path) = &args.scene {
        cfg.scene = Some(SceneSpec::from_json_file(path)?);
    }
    if let Some(seed) = seed {
        cfg.seed = seed;
        if let Some(s) = &mut cfg.scene {
            s.seed = seed;
        }
    }
    if cfg.count == 0 {
        return Err(Error::Config("count must be >= 1".into()));
    }
    let algo_cfg = AlgoConfig {
        fdkf: cfg.fdkf,
        nlms: cfg.nlms,
        model: cfg.model,
    };
    let plan = CancellerPlan::resolve(args.algo, args.variant, args.weights.as_deref(), algo_cfg)?;
    log_config("eval", &cfg)?;
    log_config("eval", &plan)?;
    let sim = SimulateConfig {
        seed: cfg.seed,
        count: cfg.count,
        scene: cfg.scene.clone(),
        random: cfg.random.clone(),
    };
    let specs = (0..cfg.count)
        .map(|i| sim.spec(i))
        .collect::<Result<Vec<_>>>()?;
    let pool = crate::train::thread_pool(args.jobs)?;
    let reports = pool.install(|| {
        specs
            .par_iter()
            .map(|spec| {
                let scene = spec.build()?;
                let rendered = render_scene(&scene)?;
                let mut canceller = plan.build()?;
                evaluate(&scene, &rendered, canceller.as_mut())
            })
            .collect::<Result<Vec<_>>>()
    })?;
    if let Some(path) = &args.csv {
        for (i, r) in reports.iter().enumerate() {
            let p = if reports.len() == 1 {
                path.clone()
            } else {
                indexed(path, i)
            };
            let mut r = r.clone();
            if !plan.traces_a() {
                r.a_trace.clear();
            }
            r.write_csv(&p)?;
        }
    }
    let scenes: Vec<EvalSummary> = reports.iter().map(|r| r.summary()).collect();
    let report = Report {
        plan: &plan,
        mean_si_sdr_in: mean(scenes.iter().map(|s| s.si_sdr_in)),
        mean_si_sdr_out: mean(scenes.iter().map(|s| s.si_sdr_out)),
        mean_si_sdr_delta: mean(scenes.iter().map(|s| s.si_sdr_delta)),
        mean_final_erle: mean(scenes.iter().map(|s| s.final_erle)),
        scenes,
    };
    println!(
        "scenes {} mean si_sdr_in {:.3} si_sdr_out {:.3} delta {:.3} final_erle {:.3}",
        report.scenes.len(),
        report.mean_si_sdr_in,
        report.mean_si_sdr_out,
        report.mean_si_sdr_delta,
        report.mean_final_erle
    );
    if let Some(path) = &args.report {
        write_text(path, &serde_json::to_string_pretty(&report)?)?;
    }
    Ok(())
}
