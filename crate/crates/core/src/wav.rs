//! 16-bit PCM mono 16 kHz WAV input and output. Other layouts are rejected.

use std::path::Path;

use crate::error::{Error, Result};
use crate::signal::TimeSignal;

pub const WAV_SAMPLE_RATE: u32 = 16_000;

fn wav_err(path: &Path, msg: impl Into<String>) -> Error {
    Error::Wav {
        path: path.to_path_buf(),
        msg: msg.into(),
    }
}

pub fn read_wav(path: &Path) -> Result<TimeSignal> {
    let mut reader = hound::WavReader::open(path).map_err(|e| wav_err(path, e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1
        || spec.bits_per_sample != 16
        || spec.sample_format != hound::SampleFormat::Int
        || spec.sample_rate != WAV_SAMPLE_RATE
    {
        return Err(wav_err(
            path,
            format!(
                "unsupported format ({} ch, {} bit {:?}, {} Hz); only 16-bit PCM mono 16 kHz is accepted",
                spec.channels, spec.bits_per_sample, spec.sample_format, spec.sample_rate
            ),
        ));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| wav_err(path, e.to_string()))?;
    TimeSignal::new(samples, spec.sample_rate)
}

/// Writes `signal` with saturation to the 16-bit range.
pub fn write_wav(path: &Path, signal: &TimeSignal) -> Result<()> {
    if signal.sample_rate != WAV_SAMPLE_RATE {
        return Err(wav_err(
            path,
            format!(
                "refusing to write {} Hz audio; only 16 kHz is supported",
                signal.sample_rate
            ),
        ));
    }
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: WAV_SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let mut writer =
        hound::WavWriter::create(path, spec).map_err(|e| wav_err(path, e.to_string()))?;
    for &v in &signal.samples {
        let q = (v * 32768.0).round().clamp(-32768.0, 32767.0) as i16;
        writer
            .write_sample(q)
            .map_err(|e| wav_err(path, e.to_string()))?;
    }
    writer.finalize().map_err(|e| wav_err(path, e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_is_exact_on_grid() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("a.wav");
        let samples: Vec<f64> = (-100..100).map(|i| i as f64 * 128.0 / 32768.0).collect();
        let sig = TimeSignal::new(samples.clone(), 16_000).unwrap();
        write_wav(&path, &sig).unwrap();
        let back = read_wav(&path).unwrap();
        assert_eq!(back.samples, samples);
    }

    #[test]
    fn rejects_other_formats() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("b.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&path, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        assert!(matches!(read_wav(&path), Err(Error::Wav { .. })));
        let sig = TimeSignal::new(vec![0.0; 4], 8_000).unwrap();
        assert!(write_wav(&dir.path().join("c.wav"), &sig).is_err());
    }

    #[test]
    fn saturates_out_of_range() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.wav");
        write_wav(&path, &TimeSignal::new(vec![2.0, -2.0], 16_000).unwrap()).unwrap();
        let back = read_wav(&path).unwrap();
        assert!((back.samples[0] - 32767.0 / 32768.0).abs() < 1e-12);
        assert_eq!(back.samples[1], -1.0);
    }
}
