use serde::{Deserialize, Serialize};

use super::{Matrix, Spectrogram};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default)]
pub struct MfccConfig {
    pub n_mels: usize,
    pub n_mfcc: usize,
}

impl Default for MfccConfig {
    fn default() -> Self {
        MfccConfig {
            n_mels: 27,
            n_mfcc: 13,
        }
    }
}

impl MfccConfig {
    pub fn validate(&self) -> Result<()> {
        if self.n_mfcc == 0 || self.n_mfcc >= self.n_mels {
            return Err(Error::BadConfig(format!(
                "n_mfcc ({}) must be in 1..n_mels ({})",
                self.n_mfcc, self.n_mels
            )));
        }
        Ok(())
    }
}

/// Cepstral coefficients, one row per frame.
#[derive(Debug, Clone, PartialEq)]
pub struct MfccSequence {
    pub coeffs: Matrix,
    pub config: MfccConfig,
}

impl MfccSequence {
    pub fn frames(&self) -> usize {
        self.coeffs.rows()
    }

    pub fn dim(&self) -> usize {
        self.coeffs.cols()
    }

    pub fn frame(&self, t: usize) -> &[f64] {
        self.coeffs.row(t)
    }
}

fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Triangular mel filters over `bins` linear bins spanning `0..bins*bin_hz`.
/// Each filter is scaled to unit sum, so a flat spectrum gives equal filter
/// energies. A filter too narrow to cover any bin centre falls back to the
/// bin nearest its centre frequency.
pub fn mel_filterbank(n_mels: usize, bins: usize, bin_hz: f64) -> Vec<Vec<f64>> {
    let top = hz_to_mel(bins as f64 * bin_hz);
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(top * i as f64 / (n_mels + 1) as f64))
        .collect();
    (0..n_mels)
        .map(|j| {
            let (lo, mid, hi) = (edges[j], edges[j + 1], edges[j + 2]);
            let mut w: Vec<f64> = (0..bins)
                .map(|m| {
                    let f = m as f64 * bin_hz;
                    if f > lo && f < mid {
                        (f - lo) / (mid - lo)
                    } else if f >= mid && f < hi {
                        (hi - f) / (hi - mid)
                    } else {
                        0.0
                    }
                })
                .collect();
            let sum: f64 = w.iter().sum();
            if sum > 0.0 {
                w.iter_mut().for_each(|v| *v /= sum);
            } else {
                let nearest = ((mid / bin_hz).round() as usize).min(bins - 1);
                w[nearest] = 1.0;
            }
            w
        })
        .collect()
}

/// Orthonormal DCT-II basis rows for `k = 1..=n_out` over `n_in` inputs.
fn dct_basis(n_in: usize, n_out: usize) -> Vec<Vec<f64>> {
    let scale = (2.0 / n_in as f64).sqrt();
    (1..=n_out)
        .map(|k| {
            (0..n_in)
                .map(|j| {
                    scale
                        * (std::f64::consts::PI * k as f64 * (j as f64 + 0.5) / n_in as f64).cos()
                })
                .collect()
        })
        .collect()
}

/// MFCCs of a log-power spectrogram: mel filter energies in linear power,
/// natural log, DCT-II, keeping coefficients `1..=n_mfcc` (c0 dropped).
pub fn mfcc(spec: &Spectrogram, cfg: &MfccConfig) -> Result<MfccSequence> {
    cfg.validate()?;
    let bins = spec.bins();
    let frames = spec.frames();
    let bank = mel_filterbank(cfg.n_mels, bins, spec.bin_hz);
    let dct = dct_basis(cfg.n_mels, cfg.n_mfcc);
    let mut coeffs = Matrix::zeros(frames, cfg.n_mfcc);
    let mut power = vec![0.0; bins];
    let mut log_mel = vec![0.0; cfg.n_mels];
    for t in 0..frames {
        for (m, p) in power.iter_mut().enumerate() {
            *p = 10f64.powf(spec.values.get(m, t) / 10.0);
        }
        for (lm, filt) in log_mel.iter_mut().zip(&bank) {
            let e: f64 = filt.iter().zip(&power).map(|(w, p)| w * p).sum();
            *lm = e.max(1e-300).ln();
        }
        let row = coeffs.row_mut(t);
        for (c, basis) in row.iter_mut().zip(&dct) {
            *c = basis.iter().zip(&log_mel).map(|(b, l)| b * l).sum();
        }
    }
    Ok(MfccSequence {
        coeffs,
        config: *cfg,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::Origin;

    #[test]
    fn constant_spectrogram_has_zero_cepstrum() {
        for &level in &[-120.0, -60.0, -3.5] {
            let spec = Spectrogram::new(Matrix::filled(256, 10, level), 31.25, -120.0, Origin::Raw);
            let m = mfcc(&spec, &MfccConfig::default()).unwrap();
            assert_eq!(m.frames(), 10);
            assert!(m.coeffs.as_slice().iter().all(|c| c.abs() < 1e-9));
        }
    }

    #[test]
    fn rejects_too_many_coefficients() {
        let spec = Spectrogram::new(Matrix::filled(64, 3, -50.0), 125.0, -120.0, Origin::Raw);
        let cfg = MfccConfig { n_mels: 13, n_mfcc: 13 };
        assert!(matches!(mfcc(&spec, &cfg), Err(Error::BadConfig(_))));
    }

    #[test]
    fn every_filter_has_weight_even_at_coarse_resolution() {
        for &(bins, hz) in &[(32usize, 250.0), (64, 125.0), (256, 31.25)] {
            for filt in mel_filterbank(27, bins, hz) {
                assert!((filt.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            }
        }
    }
}
