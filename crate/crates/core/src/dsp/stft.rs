use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::{Matrix, Origin, Spectrogram, Waveform, DEFAULT_FLOOR_DB};
use crate::error::{Error, Result};

/// STFT analysis settings. The hop is always half the window (50% overlap)
/// and the window is a periodic Hann window.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct StftConfig {
    pub window_len: usize,
    pub floor_db: f64,
}

impl Default for StftConfig {
    fn default() -> Self {
        StftConfig {
            window_len: 512,
            floor_db: DEFAULT_FLOOR_DB,
        }
    }
}

impl StftConfig {
    pub fn new(window_len: usize) -> Result<Self> {
        let cfg = StftConfig {
            window_len,
            ..Default::default()
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.window_len < 64 || self.window_len % 2 != 0 {
            return Err(Error::BadConfig(format!(
                "window length must be even and >= 64, got {}",
                self.window_len
            )));
        }
        if !self.floor_db.is_finite() {
            return Err(Error::BadConfig("floor_db must be finite".into()));
        }
        Ok(())
    }

    pub fn hop(&self) -> usize {
        self.window_len / 2
    }

    /// Number of positive-frequency bins kept (DC up to, excluding, Nyquist).
    pub fn bins(&self) -> usize {
        self.window_len / 2
    }

    pub fn bin_hz(&self, sample_rate_hz: u32) -> f64 {
        sample_rate_hz as f64 / self.window_len as f64
    }

    /// Frames produced for a signal of `len` samples (no padding).
    pub fn frames_for(&self, len: usize) -> usize {
        if len < self.window_len {
            0
        } else {
            1 + (len - self.window_len) / self.hop()
        }
    }

    pub fn window(&self) -> Vec<f64> {
        hann(self.window_len)
    }
}

/// Periodic Hann window.
pub fn hann(n: usize) -> Vec<f64> {
    (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect()
}

/// Log-power spectrogram `10 log10 |X|^2` floored at `cfg.floor_db`.
///
/// Each frame is windowed and its DFT scaled by `1 / sum(window)`, so a
/// full-scale sinusoid at a bin centre reads about -6 dB.
pub fn stft_logpower(wave: &Waveform, cfg: &StftConfig) -> Result<Spectrogram> {
    cfg.validate()?;
    wave.check_rate()?;
    let n = cfg.window_len;
    if wave.len() < n {
        return Err(Error::SignalTooShort {
            got: wave.len(),
            need: n,
        });
    }
    let hop = cfg.hop();
    let bins = cfg.bins();
    let frames = cfg.frames_for(wave.len());
    let window = cfg.window();
    let norm = 1.0 / window.iter().sum::<f64>();

    let fft = FftPlanner::<f64>::new().plan_fft_forward(n);
    let mut buf = vec![Complex::new(0.0, 0.0); n];
    let mut scratch = vec![Complex::new(0.0, 0.0); fft.get_inplace_scratch_len()];
    let mut values = Matrix::zeros(bins, frames);
    for t in 0..frames {
        let frame = &wave.samples[t * hop..t * hop + n];
        for ((b, &x), &w) in buf.iter_mut().zip(frame).zip(&window) {
            *b = Complex::new(x * w, 0.0);
        }
        fft.process_with_scratch(&mut buf, &mut scratch);
        for (k, c) in buf.iter().take(bins).enumerate() {
            values.set(k, t, power_to_db(c.norm_sqr() * norm * norm, cfg.floor_db));
        }
    }
    Ok(Spectrogram::new(
        values,
        cfg.bin_hz(wave.sample_rate_hz),
        cfg.floor_db,
        Origin::Raw,
    ))
}

#[inline]
pub(crate) fn power_to_db(power: f64, floor_db: f64) -> f64 {
    let db = 10.0 * power.log10();
    if db.is_nan() || db < floor_db {
        floor_db
    } else {
        db
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn wave(samples: Vec<f64>) -> Waveform {
        Waveform::new(samples, 16_000)
    }

    #[test]
    fn about_four_seconds_yield_one_full_patch() {
        // 255 hops plus one window: the shortest signal giving 256 frames.
        let len = 255 * 256 + 512;
        let w = wave((0..len).map(|i| (i as f64 * 0.01).sin() * 0.1).collect());
        let s = stft_logpower(&w, &StftConfig::default()).unwrap();
        assert_eq!(s.bins(), 256);
        assert_eq!(s.frames(), 256);
        assert!((w.duration_secs() - 4.112).abs() < 1e-9);
    }

    #[test]
    fn silence_sits_on_the_floor() {
        let s = stft_logpower(&wave(vec![0.0; 16_000]), &StftConfig::default()).unwrap();
        assert!(s.values.as_slice().iter().all(|&v| v == -120.0));
    }

    #[test]
    fn sine_peaks_at_expected_bin() {
        let x: Vec<f64> = (0..16_000)
            .map(|i| (2.0 * PI * 1000.0 * i as f64 / 16_000.0).sin())
            .collect();
        let s = stft_logpower(&wave(x), &StftConfig::default()).unwrap();
        for t in 0..s.frames() {
            let col = s.values.column(t);
            let argmax = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.total_cmp(b.1))
                .unwrap()
                .0;
            assert_eq!(argmax, 32);
        }
    }

    #[test]
    fn rejects_short_and_wrong_rate() {
        let cfg = StftConfig::default();
        assert!(matches!(
            stft_logpower(&wave(vec![0.1; 511]), &cfg),
            Err(Error::SignalTooShort { got: 511, need: 512 })
        ));
        let w = Waveform::new(vec![0.1; 1024], 44_100);
        assert!(matches!(stft_logpower(&w, &cfg), Err(Error::BadSampleRate(44_100))));
    }

    #[test]
    fn config_validation() {
        assert!(StftConfig::new(62).is_err());
        assert!(StftConfig::new(65).is_err());
        assert!(StftConfig::new(64).is_ok());
    }
}
