//! 16-bit mono 16 kHz PCM WAV reading and writing.

use std::path::Path;

use super::{Waveform, SAMPLE_RATE_HZ};
use crate::error::{Error, Result};

pub fn read_wav(path: &Path) -> Result<Waveform> {
    let bad = |reason: String| Error::BadWav {
        path: path.to_path_buf(),
        reason,
    };
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let mut reader = hound::WavReader::open(path).map_err(|e| bad(e.to_string()))?;
    let spec = reader.spec();
    if spec.channels != 1 {
        return Err(bad(format!("expected mono, found {} channels", spec.channels)));
    }
    if spec.sample_rate != SAMPLE_RATE_HZ {
        return Err(bad(format!(
            "expected 16000 Hz sample rate, found {} Hz",
            spec.sample_rate
        )));
    }
    if spec.sample_format != hound::SampleFormat::Int || spec.bits_per_sample != 16 {
        return Err(bad(format!(
            "expected 16-bit integer PCM, found {}-bit {:?}",
            spec.bits_per_sample, spec.sample_format
        )));
    }
    let samples = reader
        .samples::<i16>()
        .map(|s| s.map(|v| v as f64 / 32768.0))
        .collect::<std::result::Result<Vec<_>, _>>()
        .map_err(|e| bad(e.to_string()))?;
    if samples.is_empty() {
        return Err(bad("no samples".into()));
    }
    Ok(Waveform::new(samples, SAMPLE_RATE_HZ))
}

/// Writes samples as 16-bit PCM, saturating values outside `[-1, 1)`.
pub fn write_wav(path: &Path, wave: &Waveform) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: wave.sample_rate_hz,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let to_io = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::Io(io),
        other => Error::BadWav {
            path: path.to_path_buf(),
            reason: other.to_string(),
        },
    };
    let mut w = hound::WavWriter::create(path, spec).map_err(to_io)?;
    for &s in &wave.samples {
        let v = (s * 32768.0).round().clamp(i16::MIN as f64, i16::MAX as f64) as i16;
        w.write_sample(v).map_err(to_io)?;
    }
    w.finalize().map_err(to_io)?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_quantizes_to_16_bit() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("a.wav");
        let w = Waveform::new(vec![0.0, 0.5, -0.5, 0.999, -1.0, 1.5], 16_000);
        write_wav(&p, &w).unwrap();
        let r = read_wav(&p).unwrap();
        assert_eq!(r.samples[..5], [0.0, 0.5, -0.5, 32735.0 / 32768.0, -1.0]);
        assert_eq!(r.samples[5], 32767.0 / 32768.0);
    }

    #[test]
    fn rejects_stereo_and_other_rates() {
        let dir = tempfile::tempdir().unwrap();
        let stereo = dir.path().join("s.wav");
        let spec = hound::WavSpec {
            channels: 2,
            sample_rate: 16_000,
            bits_per_sample: 16,
            sample_format: hound::SampleFormat::Int,
        };
        let mut w = hound::WavWriter::create(&stereo, spec).unwrap();
        w.write_sample(0i16).unwrap();
        w.write_sample(0i16).unwrap();
        w.finalize().unwrap();
        let err = read_wav(&stereo).unwrap_err().to_string();
        assert!(err.contains("2 channels"), "{err}");

        let fast = dir.path().join("f.wav");
        write_wav(&fast, &Waveform::new(vec![0.1; 10], 44_100)).unwrap();
        let err = read_wav(&fast).unwrap_err().to_string();
        assert!(err.contains("44100 Hz"), "{err}");
    }
}
