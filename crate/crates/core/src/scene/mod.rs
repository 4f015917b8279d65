//! Reproducible synthetic echo scenes: `y = s + n + h * NL(x)`.
//!
//! A [`SceneSpec`] is the serializable description (the JSON scene file);
//! [`SceneSpec::build`] draws every random quantity from the scene seed and
//! returns an [`EchoScene`], and [`render_scene`] mixes it down.

mod random;
mod rir;
mod source;

use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::TimeSignal;

pub use random::RandomSceneConfig;
pub use rir::{
    estimate_rt60, image_source_rir, rt60_to_reflectivity, schroeder_edc_db, Rir, RoomSpec,
    MAX_RT60,
};
pub use source::SourceSpec;

/// Memoryless loudspeaker distortion.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum NonlinearitySpec {
    #[default]
    None,
    HardClip {
        x_max: f64,
    },
    Sigmoidal {
        gain: f64,
    },
    /// Stages applied left to right.
    Cascade {
        stages: Vec<NonlinearitySpec>,
    },
}

impl NonlinearitySpec {
    pub fn validate(&self) -> Result<()> {
        match self {
            NonlinearitySpec::None => Ok(()),
            NonlinearitySpec::HardClip { x_max } => {
                if *x_max > 0.0 && *x_max <= 1.0 {
                    Ok(())
                } else {
                    Err(Error::Scene(format!("clip level {x_max} outside (0, 1]")))
                }
            }
            NonlinearitySpec::Sigmoidal { gain } => {
                if gain.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Scene("sigmoidal gain must be finite".into()))
                }
            }
            NonlinearitySpec::Cascade { stages } => stages.iter().try_for_each(|s| s.validate()),
        }
    }

    pub fn apply_sample(&self, x: f64) -> f64 {
        match self {
            NonlinearitySpec::None => x,
            NonlinearitySpec::HardClip { x_max } => x.signum() * x.abs().min(*x_max),
            NonlinearitySpec::Sigmoidal { gain } => {
                let b = 1.5 * x - 0.3 * x * x;
                let a = if b > 0.0 { 4.0 } else { 0.5 };
                gain * (2.0 / (1.0 + (-a * b).exp()) - 1.0)
            }
            NonlinearitySpec::Cascade { stages } => {
                stages.iter().fold(x, |acc, s| s.apply_sample(acc))
            }
        }
    }
}

pub fn apply_nonlinearity(x: &TimeSignal, spec: &NonlinearitySpec) -> TimeSignal {
    TimeSignal {
        samples: x.samples.iter().map(|&v| spec.apply_sample(v)).collect(),
        sample_rate: x.sample_rate,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum RirSpec {
    ImageSource {
        room: RoomSpec,
        max_order: usize,
        /// Keep only the first `truncate` taps.
        #[serde(default)]
        truncate: Option<usize>,
    },
    Taps {
        taps: Vec<f64>,
    },
}

impl RirSpec {
    pub fn build(&self, fs: u32) -> Result<Rir> {
        match self {
            RirSpec::ImageSource {
                room,
                max_order,
                truncate,
            } => {
                if room.fs != fs {
                    return Err(Error::Scene(format!(
                        "room sample rate {} differs from scene rate {fs}",
                        room.fs
                    )));
                }
                let mut rir = image_source_rir(room, *max_order)?;
                if let Some(n) = truncate {
                    rir.taps.truncate((*n).max(1));
                }
                Ok(rir)
            }
            RirSpec::Taps { taps } => Rir::new(taps.clone(), fs),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleEntry {
    pub start_sample: usize,
    pub rir: RirSpec,
}

fn default_scene_fs() -> u32 {
    16_000
}

/// Serializable scene description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneSpec {
    #[serde(default = "default_scene_fs")]
    pub sample_rate: u32,
    pub duration_s: f64,
    pub farend: SourceSpec,
    pub nearend: SourceSpec,
    pub rir_schedule: Vec<ScheduleEntry>,
    #[serde(default)]
    pub nonlinearity: NonlinearitySpec,
    /// Near-end to echo energy ratio. `None` leaves the near-end unscaled.
    #[serde(default)]
    pub ser_db: Option<f64>,
    /// RMS of white noise added to the microphone only.
    #[serde(default)]
    pub noise_rms: f64,
    pub seed: u64,
}

impl SceneSpec {
    pub fn from_json_file(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let mut spec: SceneSpec = serde_json::from_str(&text)?;
        let base = path.parent().unwrap_or(Path::new("."));
        spec.farend.resolve_paths(base);
        spec.nearend.resolve_paths(base);
        Ok(spec)
    }

    pub fn len(&self) -> usize {
        (self.duration_s * self.sample_rate as f64).round() as usize
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Draws all signals and impulse responses from the seed.
    pub fn build(&self) -> Result<EchoScene> {
        if self.sample_rate == 0 || !(self.duration_s > 0.0) {
            return Err(Error::Scene(
                "sample rate and duration must be positive".into(),
            ));
        }
        let len = self.len();
        let fs = self.sample_rate;
        let mut far_rng = stream_rng(self.seed, 1);
        let mut near_rng = stream_rng(self.seed, 2);
        let farend = TimeSignal::new(self.farend.generate(len, fs, &mut far_rng)?, fs)?;
        let nearend = TimeSignal::new(self.nearend.generate(len, fs, &mut near_rng)?, fs)?;
        let rir_schedule = self
            .rir_schedule
            .iter()
            .map(|e| Ok((e.start_sample, e.rir.build(fs)?)))
            .collect::<Result<Vec<_>>>()?;
        let scene = EchoScene {
            farend,
            nearend,
            rir_schedule,
            nonlinearity: self.nonlinearity.clone(),
            ser_db: self.ser_db,
            noise_rms: self.noise_rms,
            seed: self.seed,
        };
        scene.validate()?;
        Ok(scene)
    }
}

pub(crate) fn stream_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// A fully materialized scene.
#[derive(Debug, Clone, PartialEq)]
pub struct EchoScene {
    pub farend: TimeSignal,
    pub nearend: TimeSignal,
    /// `(start_sample, rir)`, sorted, first entry at sample 0.
    pub rir_schedule: Vec<(usize, Rir)>,
    pub nonlinearity: NonlinearitySpec,
    pub ser_db: Option<f64>,
    pub noise_rms: f64,
    pub seed: u64,
}

impl EchoScene {
    pub fn validate(&self) -> Result<()> {
        if self.farend.len() != self.nearend.len() {
            return Err(Error::Scene(format!(
                "far-end has {} samples, near-end {}",
                self.farend.len(),
                self.nearend.len()
            )));
        }
        if self.farend.sample_rate != self.nearend.sample_rate {
            return Err(Error::Scene(
                "far-end and near-end sample rates differ".into(),
            ));
        }
        match self.rir_schedule.first() {
            Some((0, _)) => {}
            _ => return Err(Error::Scene("RIR schedule must start at sample 0".into())),
        }
        if self.rir_schedule.windows(2).any(|w| w[1].0 <= w[0].0) {
            return Err(Error::Scene(
                "RIR schedule must be strictly increasing".into(),
            ));
        }
        if let Some(ser) = self.ser_db {
            if !ser.is_finite() {
                return Err(Error::Scene("SER must be finite".into()));
            }
        }
        if !(self.noise_rms >= 0.0) {
            return Err(Error::Scene("noise RMS must be non-negative".into()));
        }
        self.nonlinearity.validate()
    }

    /// Active impulse response index for each schedule segment boundary.
    pub fn rir_at(&self, sample: usize) -> &Rir {
        let idx = self
            .rir_schedule
            .partition_point(|(start, _)| *start <= sample)
            .saturating_sub(1);
        &self.rir_schedule[idx].1
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RenderedScene {
    pub mic: TimeSignal,
    pub echo: TimeSignal,
    /// The near-end after SER scaling: the cancellation target.
    pub nearend: TimeSignal,
}

/// Echo by segment-wise convolution. At each schedule boundary the
/// convolution restarts with the new response: neither the old response's
/// tail nor pre-switch input reaches the new segment.
pub fn render_echo(farend_nl: &[f64], schedule: &[(usize, Rir)]) -> Vec<f64> {
    let len = farend_nl.len();
    let mut echo = vec![0.0; len];
    for (i, (start, rir)) in schedule.iter().enumerate() {
        let end = schedule.get(i + 1).map_or(len, |(s, _)| (*s).min(len));
        for n in (*start).min(len)..end {
            let span = (n - start).min(rir.taps.len() - 1);
            echo[n] = (0..=span).map(|j| rir.taps[j] * farend_nl[n - j]).sum();
        }
    }
    echo
}

pub fn render_scene(scene: &EchoScene) -> Result<RenderedScene> {
    scene.validate()?;
    let fs = scene.farend.sample_rate;
    let nl = apply_nonlinearity(&scene.farend, &scene.nonlinearity);
    let echo = render_echo(&nl.samples, &scene.rir_schedule);

    let echo_energy: f64 = echo.iter().map(|v| v * v).sum();
    let near_energy = scene.nearend.energy();
    let mut near = scene.nearend.samples.clone();
    if let (Some(ser), true) = (scene.ser_db, near_energy > 0.0) {
        if echo_energy <= 0.0 {
            return Err(Error::Scene(
                "cannot set SER: far-end echo has zero energy (silent far-end, or an RIR truncated before the direct path)".into(),
            ));
        }
        let gain = (echo_energy * 10f64.powf(ser / 10.0) / near_energy).sqrt();
        near.iter_mut().for_each(|v| *v *= gain);
    }

    let mut mic: Vec<f64> = near.iter().zip(&echo).map(|(s, d)| s + d).collect();
    if scene.noise_rms > 0.0 {
        let mut rng = stream_rng(scene.seed, 3);
        let normal = Normal::new(0.0, scene.noise_rms)
            .map_err(|e| Error::Scene(format!("noise distribution: {e}")))?;
        mic.iter_mut().for_each(|v| *v += normal.sample(&mut rng));
    }

    Ok(RenderedScene {
        mic: TimeSignal::new(mic, fs)?,
        echo: TimeSignal::new(echo, fs)?,
        nearend: TimeSignal::new(near, fs)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scene_with(far: Vec<f64>, near: Vec<f64>, schedule: Vec<(usize, Rir)>) -> EchoScene {
        EchoScene {
            farend: TimeSignal::new(far, 16_000).unwrap(),
            nearend: TimeSignal::new(near, 16_000).unwrap(),
            rir_schedule: schedule,
            nonlinearity: NonlinearitySpec::None,
            ser_db: Some(0.0),
            noise_rms: 0.0,
            seed: 1,
        }
    }

    fn noise(seed: u64, n: usize) -> Vec<f64> {
        SourceSpec::White { rms: 0.3 }
            .generate(n, 16_000, &mut stream_rng(seed, 0))
            .unwrap()
    }

    #[test]
    fn nonlinearity_definitions() {
        let x = TimeSignal::new(vec![0.3, -0.2, 0.9], 16_000).unwrap();
        assert_eq!(apply_nonlinearity(&x, &NonlinearitySpec::None), x);
        let clip = NonlinearitySpec::HardClip { x_max: 0.5 };
        assert_eq!(clip.apply_sample(0.8), 0.5);
        assert_eq!(clip.apply_sample(-0.8), -0.5);
        assert_eq!(clip.apply_sample(0.2), 0.2);
        let sig = NonlinearitySpec::Sigmoidal { gain: 2.0 };
        assert_eq!(sig.apply_sample(0.0), 0.0);
        // b = 1.5*0.5 - 0.3*0.25 = 0.675, a = 4
        let expected = 2.0 * (2.0 / (1.0 + (-4.0f64 * 0.675).exp()) - 1.0);
        assert!((sig.apply_sample(0.5) - expected).abs() < 1e-15);
        let cascade = NonlinearitySpec::Cascade {
            stages: vec![clip.clone(), sig.clone()],
        };
        assert_eq!(cascade.apply_sample(0.9), sig.apply_sample(0.5));
        assert!(NonlinearitySpec::HardClip { x_max: 1.5 }
            .validate()
            .is_err());
        assert!(NonlinearitySpec::HardClip { x_max: 0.0 }
            .validate()
            .is_err());
    }

    #[test]
    fn identity_echo_path_passes_far_end() {
        let far = noise(1, 500);
        let mut scene = scene_with(
            far.clone(),
            vec![0.0; 500],
            vec![(0, Rir::new(vec![1.0], 16_000).unwrap())],
        );
        scene.ser_db = Some(5.0);
        let out = render_scene(&scene).unwrap();
        assert_eq!(out.mic.samples, far);
    }

    #[test]
    fn zero_db_ser_balances_energies() {
        let rir = Rir::new(vec![0.5, 0.2, -0.1], 16_000).unwrap();
        let scene = scene_with(noise(2, 4000), noise(3, 4000), vec![(0, rir)]);
        let out = render_scene(&scene).unwrap();
        let (es, ed) = (out.nearend.energy(), out.echo.energy());
        assert!(((es - ed) / ed).abs() < 1e-9);
    }

    #[test]
    fn schedule_segments_match_convolution() {
        let far = noise(4, 3000);
        let h1 = vec![0.9, -0.3, 0.1, 0.05];
        let h2 = vec![0.0, 0.0, 0.4, 0.2, -0.2, 0.1];
        let t = 1500;
        let scene = scene_with(
            far.clone(),
            vec![0.0; 3000],
            vec![
                (0, Rir::new(h1.clone(), 16_000).unwrap()),
                (t, Rir::new(h2.clone(), 16_000).unwrap()),
            ],
        );
        let echo = render_scene(&scene).unwrap().echo.samples;
        let conv = |h: &[f64], n: usize| -> f64 {
            (0..h.len())
                .filter(|&j| j <= n)
                .map(|j| h[j] * far[n - j])
                .sum()
        };
        for n in 0..t {
            assert!((echo[n] - conv(&h1, n)).abs() < 1e-12);
        }
        for n in t + h2.len()..3000 {
            assert!((echo[n] - conv(&h2, n)).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_echo_with_ser_is_an_error() {
        let scene = scene_with(
            vec![0.0; 100],
            noise(5, 100),
            vec![(0, Rir::new(vec![1.0], 16_000).unwrap())],
        );
        assert!(matches!(render_scene(&scene), Err(Error::Scene(_))));
    }

    #[test]
    fn echo_energy_scales_quadratically() {
        let far = noise(6, 2000);
        let rir = Rir::new(vec![0.3, 0.1, -0.2], 16_000).unwrap();
        let base = scene_with(far.clone(), vec![0.0; 2000], vec![(0, rir.clone())]);
        let scaled = scene_with(
            far.iter().map(|v| 3.0 * v).collect(),
            vec![0.0; 2000],
            vec![(0, rir)],
        );
        let e1 = render_scene(&base).unwrap().echo.energy();
        let e2 = render_scene(&scaled).unwrap().echo.energy();
        assert!((e2 / e1 - 9.0).abs() < 1e-9);
    }

    #[test]
    fn unsorted_schedule_rejected() {
        let rir = Rir::new(vec![1.0], 16_000).unwrap();
        let scene = scene_with(
            vec![0.1; 10],
            vec![0.0; 10],
            vec![(3, rir.clone()), (1, rir)],
        );
        assert!(scene.validate().is_err());
    }

    #[test]
    fn spec_build_is_deterministic_and_json_round_trips() {
        let spec = RandomSceneConfig::default().sample(17).unwrap();
        let json = serde_json::to_string(&spec).unwrap();
        let back: SceneSpec = serde_json::from_str(&json).unwrap();
        assert_eq!(back, spec);
        let a = render_scene(&spec.build().unwrap()).unwrap();
        let b = render_scene(&back.build().unwrap()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn unknown_json_keys_rejected() {
        let text = r#"{"duration_s":1.0,"farend":{"kind":"silence"},"nearend":{"kind":"silence"},
            "rir_schedule":[],"seed":1,"bogus":3}"#;
        assert!(serde_json::from_str::<SceneSpec>(text).is_err());
    }
}
