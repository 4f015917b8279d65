use std::path::{Path, PathBuf};

use nkaec::scene::{render_scene, RandomSceneConfig, SceneSpec};
use nkaec::training::scene_seed;
use nkaec::wav::write_wav;
use nkaec::{Error, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::common::{create_dir, load_config, log_config, write_text};

#[derive(clap::Args)]
pub struct Args {
    /// JSON simulation config: {"seed", "count", "scene" | "random"}.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Scene description JSON; replaces the config's scene.
    #[arg(long)]
    scene: Option<PathBuf>,
    /// Output directory; one scene_NNN subdirectory per scene.
    #[arg(long)]
    out: PathBuf,
    /// Worker threads.
    #[arg(long, default_value_t = 1)]
    jobs: usize,
}

/// Either one fixed scene (optionally reseeded per index) or scenes drawn
/// from a random distribution.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SimulateConfig {
    pub seed: u64,
    pub count: usize,
    pub scene: Option<SceneSpec>,
    pub random: Option<RandomSceneConfig>,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            count: 1,
            scene: None,
            random: None,
        }
    }
}

impl SimulateConfig {
    /// Scene `i`. A fixed scene keeps its own seed for the first index.
    pub fn spec(&self, i: usize) -> Result<SceneSpec> {
        match (&self.scene, &self.random) {
            (Some(_), Some(_)) => Err(Error::Config(
                "set either \"scene\" or \"random\", not both".into(),
            )),
            (Some(s), None) => {
                let mut s = s.clone();
                if i > 0 {
                    s.seed = scene_seed(s.seed, i);
                }
                Ok(s)
            }
            (None, r) => r
                .clone()
                .unwrap_or_default()
                .sample(scene_seed(self.seed, i)),
        }
    }
}

#[derive(Serialize)]
struct Truth<'a> {
    spec: &'a SceneSpec,
    samples: usize,
    sample_rate: u32,
    measured_ser_db: Option<f64>,
    /// Echo-path taps per schedule entry.
    rir_schedule: Vec<TruthRir>,
}

#[derive(Serialize)]
struct TruthRir {
    start_sample: usize,
    taps: Vec<f64>,
}

fn energy_db(x: &[f64]) -> f64 {
    10.0 * x.iter().map(|v| v * v).sum::<f64>().log10()
}

fn write_scene(dir: &Path, spec: &SceneSpec) -> Result<()> {
    create_dir(dir)?;
    let scene = spec.build()?;
    let rendered = render_scene(&scene)?;
    let fs = scene.farend.sample_rate;
    write_wav(&dir.join("farend.wav"), &scene.farend)?;
    write_wav(&dir.join("nearend.wav"), &rendered.nearend)?;
    write_wav(&dir.join("echo.wav"), &rendered.echo)?;
    write_wav(&dir.join("mic.wav"), &rendered.mic)?;
    let near = &rendered.nearend.samples;
    let echo = &rendered.echo.samples;
    let measured = (near.iter().any(|v| *v != 0.0) && echo.iter().any(|v| *v != 0.0))
        .then(|| energy_db(near) - energy_db(echo));
    let truth = Truth {
        spec,
        samples: scene.farend.len(),
        sample_rate: fs,
        measured_ser_db: measured,
        rir_schedule: scene
            .rir_schedule
            .iter()
            .map(|(start, rir)| TruthRir {
                start_sample: *start,
                taps: rir.taps.clone(),
            })
            .collect(),
    };
    write_text(
        &dir.join("scene.json"),
        &serde_json::to_string_pretty(spec)?,
    )?;
    write_text(
        &dir.join("truth.json"),
        &serde_json::to_string_pretty(&truth)?,
    )?;
    Ok(())
}

pub fn run(args: Args, seed: Option<u64>) -> Result<()> {
    let mut cfg: SimulateConfig = load_config(args.config.as_deref())?;
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
    log_config("simulate", &cfg)?;
    let specs = (0..cfg.count)
        .map(|i| cfg.spec(i))
        .collect::<Result<Vec<_>>>()?;
    create_dir(&args.out)?;
    let pool = crate::train::thread_pool(args.jobs)?;
    pool.install(|| {
        specs
            .par_iter()
            .enumerate()
            .map(|(i, spec)| write_scene(&args.out.join(format!("scene_{i:03}")), spec))
            .collect::<Result<Vec<()>>>()
    })?;
    eprintln!(
        "nkaec simulate: wrote {} scene(s) to {}",
        cfg.count,
        args.out.display()
    );
    Ok(())
}
