use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{
    stream_rng, NonlinearitySpec, RirSpec, RoomSpec, SceneSpec, ScheduleEntry, SourceSpec,
};
use crate::error::{Error, Result};

/// Distribution over scenes; [`RandomSceneConfig::sample`] turns a seed
/// into a concrete [`SceneSpec`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RandomSceneConfig {
    pub sample_rate: u32,
    pub duration_s: f64,
    pub farend: SourceSpec,
    pub nearend: SourceSpec,
    pub rt60: [f64; 2],
    pub ser_db: [f64; 2],
    pub room_min: [f64; 3],
    pub room_max: [f64; 3],
    /// Source to microphone distance range in meters.
    pub distance: [f64; 2],
    pub max_order: usize,
    pub truncate: Option<usize>,
    pub nonlinearity: NonlinearitySpec,
    /// When set, each scene gets a hard clip with a level drawn from this range.
    pub clip_range: Option<[f64; 2]>,
    /// When set, a second response takes over at this fraction of the scene.
    pub path_change_at: Option<f64>,
}

impl Default for RandomSceneConfig {
    fn default() -> Self {
        Self {
            sample_rate: 16_000,
            duration_s: 2.0,
            farend: SourceSpec::Ar2 {
                rms: 0.1,
                pole_radius: 0.9,
                center_hz: 600.0,
            },
            nearend: SourceSpec::Bursts {
                rms: 0.1,
                on_s: 0.4,
                off_s: 0.4,
                low_hz: 200.0,
                high_hz: 4000.0,
            },
            rt60: [0.0, 0.6],
            ser_db: [-10.0, 10.0],
            room_min: [3.0, 3.0, 2.5],
            room_max: [8.0, 6.0, 3.5],
            distance: [0.3, 1.5],
            max_order: 12,
            truncate: None,
            nonlinearity: NonlinearitySpec::None,
            clip_range: None,
            path_change_at: None,
        }
    }
}

fn uniform<R: Rng>(rng: &mut R, range: [f64; 2]) -> f64 {
    if range[1] > range[0] {
        rng.random_range(range[0]..range[1])
    } else {
        range[0]
    }
}

impl RandomSceneConfig {
    fn draw_room<R: Rng>(&self, rng: &mut R) -> Result<RoomSpec> {
        for _ in 0..1000 {
            let dims: [f64; 3] =
                std::array::from_fn(|i| uniform(rng, [self.room_min[i], self.room_max[i]]));
            let src: [f64; 3] = std::array::from_fn(|i| uniform(rng, [0.5, dims[i] - 0.5]));
            let dist = uniform(rng, self.distance);
            // Random direction on the sphere.
            let z: f64 = rng.random_range(-1.0..1.0);
            let phi: f64 = rng.random_range(0.0..std::f64::consts::TAU);
            let rxy = (1.0 - z * z).sqrt();
            let dir = [rxy * phi.cos(), rxy * phi.sin(), z];
            let mic: [f64; 3] = std::array::from_fn(|i| src[i] + dist * dir[i]);
            let room = RoomSpec {
                dimensions: dims,
                source_pos: src,
                mic_pos: mic,
                rt60: uniform(rng, self.rt60),
                speed_of_sound: 343.0,
                fs: self.sample_rate,
            };
            let absorbing = room.rt60 == 0.0 || super::rt60_to_reflectivity(&room).is_ok();
            if room.validate().is_ok() && absorbing {
                return Ok(room);
            }
        }
        Err(Error::Scene(
            "could not draw a valid room from the configured ranges".into(),
        ))
    }

    pub fn sample(&self, seed: u64) -> Result<SceneSpec> {
        let mut rng = stream_rng(seed, 7);
        let len = (self.duration_s * self.sample_rate as f64).round() as usize;
        let mut schedule = vec![ScheduleEntry {
            start_sample: 0,
            rir: RirSpec::ImageSource {
                room: self.draw_room(&mut rng)?,
                max_order: self.max_order,
                truncate: self.truncate,
            },
        }];
        if let Some(frac) = self.path_change_at {
            schedule.push(ScheduleEntry {
                start_sample: ((frac * len as f64) as usize).clamp(1, len.max(2) - 1),
                rir: RirSpec::ImageSource {
                    room: self.draw_room(&mut rng)?,
                    max_order: self.max_order,
                    truncate: self.truncate,
                },
            });
        }
        let nonlinearity = match self.clip_range {
            Some(range) => NonlinearitySpec::HardClip {
                x_max: uniform(&mut rng, range),
            },
            None => self.nonlinearity.clone(),
        };
        Ok(SceneSpec {
            sample_rate: self.sample_rate,
            duration_s: self.duration_s,
            farend: self.farend.clone(),
            nearend: self.nearend.clone(),
            rir_schedule: schedule,
            nonlinearity,
            ser_db: Some(uniform(&mut rng, self.ser_db)),
            noise_rms: 0.0,
            seed,
        })
    }
}
