//! Shoebox room impulse responses by the image-source method.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Upper end of the supported reverberation range.
pub const MAX_RT60: f64 = 0.6;

fn default_speed_of_sound() -> f64 {
    343.0
}

fn default_fs() -> u32 {
    16_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoomSpec {
    /// Lx, Ly, Lz in meters.
    pub dimensions: [f64; 3],
    pub source_pos: [f64; 3],
    pub mic_pos: [f64; 3],
    /// Seconds; zero means anechoic.
    pub rt60: f64,
    #[serde(default = "default_speed_of_sound")]
    pub speed_of_sound: f64,
    #[serde(default = "default_fs")]
    pub fs: u32,
}

impl RoomSpec {
    pub fn validate(&self) -> Result<()> {
        if self.dimensions.iter().any(|&d| !(d > 0.0 && d.is_finite())) {
            return Err(Error::Room("dimensions must be positive".into()));
        }
        for (name, p) in [("source", &self.source_pos), ("mic", &self.mic_pos)] {
            let inside = p
                .iter()
                .zip(&self.dimensions)
                .all(|(&x, &l)| x > 0.0 && x < l);
            if !inside {
                return Err(Error::Room(format!(
                    "{name} position {p:?} is not inside the room"
                )));
            }
        }
        if !(0.0..=MAX_RT60).contains(&self.rt60) {
            return Err(Error::Room(format!(
                "rt60 {} outside [0, {MAX_RT60}] s",
                self.rt60
            )));
        }
        if !(self.speed_of_sound > 0.0) || self.fs == 0 {
            return Err(Error::Room("speed of sound and fs must be positive".into()));
        }
        Ok(())
    }

    pub fn volume(&self) -> f64 {
        self.dimensions.iter().product()
    }

    pub fn surface(&self) -> f64 {
        let [x, y, z] = self.dimensions;
        2.0 * (x * y + x * z + y * z)
    }

    pub fn source_mic_distance(&self) -> f64 {
        distance(&self.source_pos, &self.mic_pos)
    }

    /// Direct-path delay in whole samples.
    pub fn direct_delay(&self) -> usize {
        (self.source_mic_distance() * self.fs as f64 / self.speed_of_sound).round() as usize
    }
}

fn distance(a: &[f64; 3], b: &[f64; 3]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// A sampled impulse response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rir {
    pub taps: Vec<f64>,
    pub fs: u32,
}

impl Rir {
    pub fn new(taps: Vec<f64>, fs: u32) -> Result<Self> {
        if taps.is_empty() {
            return Err(Error::Scene(
                "impulse response must have at least one tap".into(),
            ));
        }
        if taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::Scene("impulse response has non-finite taps".into()));
        }
        Ok(Self { taps, fs })
    }

    pub fn energy(&self) -> f64 {
        self.taps.iter().map(|t| t * t).sum()
    }

    pub fn first_nonzero(&self) -> Option<usize> {
        self.taps.iter().position(|&t| t != 0.0)
    }

    /// Truncates or zero-pads to `len` taps.
    pub fn fitted(&self, len: usize) -> Vec<f64> {
        let mut taps = self.taps.clone();
        taps.resize(len, 0.0);
        taps
    }
}

/// Uniform wall reflection coefficient from Sabine's formula.
pub fn rt60_to_reflectivity(room: &RoomSpec) -> Result<f64> {
    if !(room.rt60 > 0.0) {
        return Err(Error::Room(
            "rt60 must be positive to derive reflectivity".into(),
        ));
    }
    let alpha = 0.161 * room.volume() / (room.rt60 * room.surface());
    if alpha >= 1.0 {
        return Err(Error::Room(format!(
            "room too small for target RT60 (absorption {alpha:.3} >= 1)"
        )));
    }
    Ok((1.0 - alpha).sqrt().clamp(f64::MIN_POSITIVE, 0.999))
}

/// Image-source RIR with `β^reflections / (4π·distance)` amplitudes and
/// delays rounded to the nearest sample. `max_order` bounds the total
/// number of wall reflections per image.
pub fn image_source_rir(room: &RoomSpec, max_order: usize) -> Result<Rir> {
    room.validate()?;
    let d0 = room.source_mic_distance();
    if d0 < 1e-9 {
        return Err(Error::Room("source and microphone coincide".into()));
    }
    let fs = room.fs as f64;
    let c = room.speed_of_sound;
    let direct = room.direct_delay();
    let len = ((room.rt60 * fs).ceil() as usize).max(direct + 1);
    let beta = if room.rt60 > 0.0 {
        rt60_to_reflectivity(room)?
    } else {
        0.0
    };

    // Largest lattice index whose images can still land inside the response.
    let reach = (len as f64 + 1.0) * c / fs;
    let bounds: Vec<i64> = room
        .dimensions
        .iter()
        .map(|&l| (reach / (2.0 * l)).ceil() as i64 + 1)
        .collect();

    let mut taps = vec![0.0; len];
    let order_limit = max_order as i64;
    let src = room.source_pos;
    let mic = room.mic_pos;
    let dims = room.dimensions;

    for mx in -bounds[0]..=bounds[0] {
        for qx in 0..=1i64 {
            let rx = (mx - qx).abs() + mx.abs();
            if rx > order_limit {
                continue;
            }
            let dx = (1 - 2 * qx) as f64 * src[0] + 2.0 * mx as f64 * dims[0] - mic[0];
            for my in -bounds[1]..=bounds[1] {
                for qy in 0..=1i64 {
                    let ry = (my - qy).abs() + my.abs();
                    if rx + ry > order_limit {
                        continue;
                    }
                    let dy = (1 - 2 * qy) as f64 * src[1] + 2.0 * my as f64 * dims[1] - mic[1];
                    for mz in -bounds[2]..=bounds[2] {
                        for qz in 0..=1i64 {
                            let rz = (mz - qz).abs() + mz.abs();
                            let order = rx + ry + rz;
                            if order > order_limit {
                                continue;
                            }
                            let dz =
                                (1 - 2 * qz) as f64 * src[2] + 2.0 * mz as f64 * dims[2] - mic[2];
                            let dist = (dx * dx + dy * dy + dz * dz).sqrt();
                            let delay = (dist * fs / c).round() as usize;
                            if delay >= len {
                                continue;
                            }
                            let gain = if order == 0 {
                                1.0
                            } else {
                                beta.powi(order as i32)
                            };
                            taps[delay] += gain / (4.0 * PI * dist);
                        }
                    }
                }
            }
        }
    }
    Rir::new(taps, room.fs)
}

/// Schroeder backward-integrated energy decay curve in dB, normalized to
/// 0 dB at the first sample.
pub fn schroeder_edc_db(taps: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut edc: Vec<f64> = taps
        .iter()
        .rev()
        .map(|t| {
            acc += t * t;
            acc
        })
        .collect();
    edc.reverse();
    let total = edc.first().copied().unwrap_or(0.0);
    edc.iter()
        .map(|&e| 10.0 * (e / total).max(1e-300).log10())
        .collect()
}

/// RT60 extrapolated from a least-squares line fit of the Schroeder curve
/// between `-5 dB` and `-25 dB`.
pub fn estimate_rt60(rir: &Rir) -> Option<f64> {
    let edc = schroeder_edc_db(&rir.taps);
    let pts: Vec<(f64, f64)> = edc
        .iter()
        .enumerate()
        .filter(|(_, &db)| (-25.0..=-5.0).contains(&db))
        .map(|(n, &db)| (n as f64 / rir.fs as f64, db))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let (sx, sy) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| (a + x, b + y));
    let (mx, my) = (sx / n, sy / n);
    let (sxy, sxx) = pts.iter().fold((0.0, 0.0), |(a, b), (x, y)| {
        (a + (x - mx) * (y - my), b + (x - mx) * (x - mx))
    });
    let slope = sxy / sxx;
    (slope < 0.0).then(|| -60.0 / slope)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn room(rt60: f64) -> RoomSpec {
        RoomSpec {
            dimensions: [5.0, 4.0, 3.0],
            source_pos: [1.0, 1.0, 1.5],
            mic_pos: [2.715, 1.0, 1.5],
            rt60,
            speed_of_sound: 343.0,
            fs: 16_000,
        }
    }

    #[test]
    fn free_field_single_tap() {
        let r = room(0.0);
        let rir = image_source_rir(&r, 0).unwrap();
        assert_eq!(rir.taps.len(), 81);
        assert_eq!(rir.first_nonzero(), Some(80));
        let expected = 1.0 / (4.0 * PI * 1.715);
        assert!((rir.taps[80] - expected).abs() < 1e-12);
        assert_eq!(rir.taps.iter().filter(|&&t| t != 0.0).count(), 1);
    }

    #[test]
    fn direct_path_is_first_tap() {
        let rir = image_source_rir(&room(0.2), 20).unwrap();
        assert_eq!(rir.first_nonzero(), Some(80));
        assert_eq!(rir.taps.len(), 3200);
        assert!(rir.energy() > 0.0);
    }

    #[test]
    fn reflectivity_limits_and_errors() {
        let b = rt60_to_reflectivity(&room(0.6)).unwrap();
        assert!(b > 0.0 && b < 1.0);
        // Longer reverberation means more reflective walls.
        assert!(
            rt60_to_reflectivity(&room(0.6)).unwrap() > rt60_to_reflectivity(&room(0.2)).unwrap()
        );
        let lossless = room(1e9);
        assert!((rt60_to_reflectivity(&lossless).unwrap() - 0.999).abs() < 1e-12);
        // 2x2x2 room: absorption = 0.161*8/(rt60*24) = 1 at rt60 = 0.161/3.
        let mut tiny = room(0.04);
        tiny.dimensions = [2.0, 2.0, 2.0];
        tiny.source_pos = [0.5, 0.5, 0.5];
        tiny.mic_pos = [1.0, 1.0, 1.0];
        assert!(matches!(rt60_to_reflectivity(&tiny), Err(Error::Room(_))));
        tiny.rt60 = 0.161 * 8.0 / 24.0;
        let alpha = 0.161 * 8.0 / (tiny.rt60 * 24.0);
        assert_eq!(alpha >= 1.0, rt60_to_reflectivity(&tiny).is_err());
    }

    #[test]
    fn coincident_and_outside_positions_rejected() {
        let mut r = room(0.1);
        r.mic_pos = r.source_pos;
        assert!(image_source_rir(&r, 2).is_err());
        let mut r = room(0.1);
        r.mic_pos = [6.0, 1.0, 1.0];
        assert!(image_source_rir(&r, 2).is_err());
        let mut r = room(0.1);
        r.rt60 = 0.9;
        assert!(image_source_rir(&r, 2).is_err());
    }

    #[test]
    fn schroeder_decay_matches_target() {
        let r = room(0.3);
        let rir = image_source_rir(&r, 200).unwrap();
        let t60 = estimate_rt60(&rir).unwrap();
        assert!((t60 - 0.3).abs() <= 0.2 * 0.3, "measured rt60 {t60:.3} s");
    }

    #[test]
    fn edc_is_monotone() {
        let rir = image_source_rir(&room(0.2), 30).unwrap();
        let edc = schroeder_edc_db(&rir.taps);
        assert!(edc.windows(2).all(|w| w[1] <= w[0] + 1e-12));
        assert!(edc[0].abs() < 1e-12);
    }
}
