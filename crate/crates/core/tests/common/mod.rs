//! Brute-force reference implementations shared by the integration tests.
#![allow(dead_code)]

use std::f64::consts::PI;

use micid::dsp::{Matrix, Origin, Spectrogram};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_signal(seed: u64, n: usize) -> Vec<f64> {
    let mut r = rng(seed);
    let amp = 10f64.powf(r.random_range(-3.0..0.0));
    (0..n).map(|_| amp * r.random_range(-1.0..1.0)).collect()
}

pub fn random_spectrogram(seed: u64, bins: usize, frames: usize, origin: Origin) -> Spectrogram {
    let mut r = rng(seed);
    let base = r.random_range(-90.0..-20.0);
    let values = Matrix::from_fn(bins, frames, |_, _| base + r.random_range(-25.0..25.0));
    Spectrogram::new(values, 16_000.0 / (2 * bins) as f64, -120.0, origin)
}

/// Per-frame DFT by direct summation, scaled by the window sum.
pub fn naive_stft_db(x: &[f64], n: usize) -> Vec<Vec<f64>> {
    let hop = n / 2;
    let w: Vec<f64> = (0..n).map(|i| 0.5 * (1.0 - (2.0 * PI * i as f64 / n as f64).cos())).collect();
    let wsum: f64 = w.iter().sum();
    let frames = if x.len() < n { 0 } else { (x.len() - n) / hop + 1 };
    let mut out = vec![vec![0.0; frames]; n / 2];
    for t in 0..frames {
        for k in 0..n / 2 {
            let (mut re, mut im) = (0.0, 0.0);
            for i in 0..n {
                let a = -2.0 * PI * (k * i) as f64 / n as f64;
                let v = x[t * hop + i] * w[i];
                re += v * a.cos();
                im += v * a.sin();
            }
            let p = (re * re + im * im) / (wsum * wsum);
            out[k][t] = if p > 0.0 { (10.0 * p.log10()).max(-120.0) } else { -120.0 };
        }
    }
    out
}

/// MFCC reference: triangular mel filters, unit-sum rows, ln energies,
/// orthonormal DCT-II coefficients 1..=n_mfcc. Returns frames x n_mfcc.
pub fn naive_mfcc(spec: &Spectrogram, n_mels: usize, n_mfcc: usize) -> Vec<Vec<f64>> {
    let bins = spec.bins();
    let mel = |f: f64| 2595.0 * (1.0 + f / 700.0).log10();
    let hz = |m: f64| 700.0 * (10f64.powf(m / 2595.0) - 1.0);
    let top = mel(bins as f64 * spec.bin_hz);
    let mut filters = vec![vec![0.0; bins]; n_mels];
    for (j, f) in filters.iter_mut().enumerate() {
        let lo = hz(top * j as f64 / (n_mels + 1) as f64);
        let mid = hz(top * (j + 1) as f64 / (n_mels + 1) as f64);
        let hi = hz(top * (j + 2) as f64 / (n_mels + 1) as f64);
        for (m, w) in f.iter_mut().enumerate() {
            let fr = m as f64 * spec.bin_hz;
            *w = if fr > lo && fr < mid {
                (fr - lo) / (mid - lo)
            } else if fr >= mid && fr < hi {
                (hi - fr) / (hi - mid)
            } else {
                0.0
            };
        }
        let s: f64 = f.iter().sum();
        if s > 0.0 {
            for w in f.iter_mut() {
                *w /= s;
            }
        } else {
            let k = ((mid / spec.bin_hz).round() as usize).min(bins - 1);
            f[k] = 1.0;
        }
    }
    (0..spec.frames())
        .map(|t| {
            let logs: Vec<f64> = filters
                .iter()
                .map(|f| {
                    let e: f64 = (0..bins)
                        .map(|m| f[m] * 10f64.powf(spec.values.get(m, t) / 10.0))
                        .sum();
                    e.max(1e-300).ln()
                })
                .collect();
            (1..=n_mfcc)
                .map(|k| {
                    (2.0 / n_mels as f64).sqrt()
                        * logs
                            .iter()
                            .enumerate()
                            .map(|(j, l)| l * (PI * k as f64 * (j as f64 + 0.5) / n_mels as f64).cos())
                            .sum::<f64>()
                })
                .collect()
        })
        .collect()
}

/// `y[t] = 0.98 y[t-1] + 0.1 (2x[t] + x[t-1] - x[t-3] - 2x[t-4])`, zero state.
pub fn naive_rasta(x: &[f64]) -> Vec<f64> {
    let at = |i: isize| if i < 0 { 0.0 } else { x[i as usize] };
    let mut y = Vec::with_capacity(x.len());
    for t in 0..x.len() as isize {
        let prev = if t == 0 { 0.0 } else { y[t as usize - 1] };
        y.push(0.98 * prev + 0.1 * (2.0 * at(t) + at(t - 1) - at(t - 3) - 2.0 * at(t - 4)));
    }
    y
}

pub fn naive_row_mean(s: &Spectrogram, m: usize) -> f64 {
    let mut acc = 0.0;
    for t in 0..s.frames() {
        acc += s.values.get(m, t);
    }
    acc / s.frames() as f64
}

pub fn naive_f1(r: &Spectrogram) -> Vec<f64> {
    (0..r.bins()).map(|m| naive_row_mean(r, m)).collect()
}

pub fn naive_f3(s: &Spectrogram) -> Vec<f64> {
    (1..s.bins()).map(|m| naive_row_mean(s, m) - naive_row_mean(s, m - 1)).collect()
}

pub fn naive_f2(d: &Spectrogram, r: &Spectrogram) -> Vec<f64> {
    let mut out = naive_f1(r);
    let n = d.frames() as f64;
    for m in 0..d.bins() {
        let (mr, md) = (naive_row_mean(r, m), naive_row_mean(d, m));
        let mut cov = 0.0;
        let mut vr = 0.0;
        let mut vd = 0.0;
        for t in 0..d.frames() {
            let a = r.values.get(m, t) - mr;
            let b = d.values.get(m, t) - md;
            cov += a * b / n;
            vr += a * a / n;
            vd += b * b / n;
        }
        out.push(if vr > 0.0 && vd > 0.0 { cov / (vr * vd).sqrt() } else { 0.0 });
    }
    for m in 0..d.bins() {
        out.push(naive_row_mean(d, m));
    }
    out
}

/// Largest KKT violation of a binary soft-margin solution, computed from
/// scratch: `f(x_i) = sum_j a_j y_j K_ij - rho`.
pub fn kkt_violation(k: &Matrix, y: &[f64], alpha: &[f64], rho: f64, c: f64) -> f64 {
    let n = y.len();
    let mut worst: f64 = 0.0;
    let eps = 1e-9 * c;
    for i in 0..n {
        let f: f64 = (0..n).map(|j| alpha[j] * y[j] * k.get(i, j)).sum::<f64>() - rho;
        let m = y[i] * f;
        let v = if alpha[i] <= eps {
            (1.0 - m).max(0.0)
        } else if alpha[i] >= c - eps {
            (m - 1.0).max(0.0)
        } else {
            (m - 1.0).abs()
        };
        worst = worst.max(v);
    }
    worst
}

/// Pearson correlation computed the textbook way.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let cov: f64 = a.iter().zip(b).map(|(x, y)| (x - ma) * (y - mb)).sum();
    let va: f64 = a.iter().map(|x| (x - ma).powi(2)).sum();
    let vb: f64 = b.iter().map(|y| (y - mb).powi(2)).sum();
    cov / (va * vb).sqrt()
}
