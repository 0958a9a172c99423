//! Virtual recording devices: a colouring FIR, a gain and self-noise.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dsp::Waveform;
use crate::error::{Error, Result};
use crate::noise::gaussian_noise;
use crate::seed;

pub const FIR_LEN: usize = 64;
const DESIGN_LEN: usize = 63;
const DESIGN_GRID: usize = 1024;
const CONTROL_POINTS: usize = 8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VirtualDevice {
    pub label: String,
    pub fir_taps: Vec<f64>,
    /// Self-noise power relative to the filtered signal power; `None` is
    /// noiseless.
    pub noise_floor_db: Option<f64>,
    pub gain_db: f64,
}

impl VirtualDevice {
    /// Delta response, no noise, unit gain.
    pub fn identity(label: impl Into<String>) -> Self {
        let mut taps = vec![0.0; FIR_LEN];
        taps[0] = 1.0;
        VirtualDevice {
            label: label.into(),
            fir_taps: taps,
            noise_floor_db: None,
            gain_db: 0.0,
        }
    }

    /// Random smooth colouration: a natural cubic spline through 8 control
    /// points in [-15, 5] dB spread over 0..Nyquist, realized as a
    /// Hann-windowed linear-phase FIR. Self-noise is drawn in [-70, -50] dB.
    pub fn random(label: impl Into<String>, global_seed: u64) -> Self {
        let label = label.into();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(global_seed, "device", &[&label]));
        let control: Vec<f64> = (0..CONTROL_POINTS)
            .map(|_| rng.random_range(-15.0..5.0))
            .collect();
        let noise = rng.random_range(-70.0..-50.0);
        let gain = rng.random_range(-3.0..3.0);
        VirtualDevice {
            label,
            fir_taps: design_fir(&control),
            noise_floor_db: Some(noise),
            gain_db: gain,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.fir_taps.is_empty() || self.fir_taps.iter().any(|t| !t.is_finite()) {
            return Err(Error::BadConfig(format!("device {}: invalid taps", self.label)));
        }
        let resp = response_db(&self.fir_taps, 129, 16_000.0);
        if resp.iter().any(|(_, db)| !(-40.0..=10.0).contains(db)) {
            return Err(Error::BadConfig(format!(
                "device {}: response outside [-40, 10] dB",
                self.label
            )));
        }
        Ok(())
    }
}

/// Natural cubic spline through equally spaced `y` on [0, 1], evaluated at `x`.
pub fn natural_spline(y: &[f64], x: f64) -> f64 {
    let n = y.len();
    if n == 1 {
        return y[0];
    }
    let h = 1.0 / (n - 1) as f64;
    // second derivatives from the tridiagonal system with m[0] = m[n-1] = 0
    let mut m = vec![0.0; n];
    if n > 2 {
        let k = n - 2;
        let mut c = vec![0.0; k];
        let mut d = vec![0.0; k];
        for i in 0..k {
            let rhs = 6.0 * (y[i + 2] - 2.0 * y[i + 1] + y[i]) / (h * h);
            let denom = 4.0 - if i > 0 { c[i - 1] } else { 0.0 };
            c[i] = 1.0 / denom;
            d[i] = (rhs - if i > 0 { d[i - 1] } else { 0.0 }) / denom;
        }
        for i in (0..k).rev() {
            m[i + 1] = d[i] - if i + 1 < k { c[i] * m[i + 2] } else { 0.0 };
        }
    }
    let x = x.clamp(0.0, 1.0);
    let i = ((x / h) as usize).min(n - 2);
    let t = x - i as f64 * h;
    let u = h - t;
    m[i] * u.powi(3) / (6.0 * h)
        + m[i + 1] * t.powi(3) / (6.0 * h)
        + (y[i] / h - m[i] * h / 6.0) * u
        + (y[i + 1] / h - m[i + 1] * h / 6.0) * t
}

/// Frequency-sampling design of a symmetric 63-tap filter whose magnitude
/// follows the spline through `control_db`, padded with one trailing zero.
pub fn design_fir(control_db: &[f64]) -> Vec<f64> {
    let centre = (DESIGN_LEN / 2) as f64;
    let amp: Vec<f64> = (0..=DESIGN_GRID / 2)
        .map(|k| {
            let x = k as f64 / (DESIGN_GRID / 2) as f64;
            10f64.powf(natural_spline(control_db, x) / 20.0)
        })
        .collect();
    let mut taps = vec![0.0; FIR_LEN];
    for (n, tap) in taps.iter_mut().take(DESIGN_LEN).enumerate() {
        let d = n as f64 - centre;
        let mut acc = amp[0];
        for (k, a) in amp.iter().enumerate().skip(1).take(DESIGN_GRID / 2 - 1) {
            acc += 2.0 * a * (2.0 * PI * k as f64 * d / DESIGN_GRID as f64).cos();
        }
        acc += amp[DESIGN_GRID / 2] * (PI * d).cos();
        let window = 0.5 - 0.5 * (2.0 * PI * (n + 1) as f64 / (DESIGN_LEN + 1) as f64).cos();
        *tap = acc / DESIGN_GRID as f64 * window;
    }
    taps
}

/// `(frequency_hz, 10 log10 |H(f)|^2)` on `points` equally spaced
/// frequencies from 0 to Nyquist inclusive.
pub fn response_db(taps: &[f64], points: usize, sample_rate_hz: f64) -> Vec<(f64, f64)> {
    (0..points)
        .map(|k| {
            let f = if points > 1 {
                k as f64 * sample_rate_hz / 2.0 / (points - 1) as f64
            } else {
                0.0
            };
            (f, power_response_db(taps, f, sample_rate_hz))
        })
        .collect()
}

/// `10 log10 |H(f)|^2` at one frequency.
pub fn power_response_db(taps: &[f64], f_hz: f64, sample_rate_hz: f64) -> f64 {
    let w = 2.0 * PI * f_hz / sample_rate_hz;
    let (mut re, mut im) = (0.0, 0.0);
    for (n, t) in taps.iter().enumerate() {
        re += t * (w * n as f64).cos();
        im -= t * (w * n as f64).sin();
    }
    10.0 * (re * re + im * im).max(1e-30).log10()
}

/// Causal convolution truncated to the input length.
pub fn fir_filter(taps: &[f64], x: &[f64]) -> Vec<f64> {
    (0..x.len())
        .map(|n| {
            taps.iter()
                .take(n + 1)
                .enumerate()
                .map(|(k, t)| t * x[n - k])
                .sum()
        })
        .collect()
}

/// Filters, applies gain and adds self-noise scaled against the output power.
pub fn simulate_device(clean: &Waveform, dev: &VirtualDevice, seed: u64) -> Result<Waveform> {
    if clean.is_empty() || clean.power() == 0.0 {
        return Err(Error::SilentInput);
    }
    let g = 10f64.powf(dev.gain_db / 20.0);
    let mut y: Vec<f64> = fir_filter(&dev.fir_taps, &clean.samples)
        .into_iter()
        .map(|v| v * g)
        .collect();
    if let Some(floor) = dev.noise_floor_db {
        let p = crate::dsp::mean_square(&y);
        let noise = gaussian_noise(y.len(), seed);
        let np = crate::dsp::mean_square(&noise);
        if np > 0.0 {
            let k = (p * 10f64.powf(floor / 10.0) / np).sqrt();
            for (v, n) in y.iter_mut().zip(&noise) {
                *v += k * n;
            }
        }
    }
    let mut out = clean.with_samples(y);
    out.device_label = Some(dev.label.clone());
    Ok(out)
}
