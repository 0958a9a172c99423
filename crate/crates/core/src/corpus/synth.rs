//! Source-filter speech synthesizer standing in for real talkers.
//!
//! Voiced segments are a jittered glottal pulse train through a cascade of
//! formant resonators; fricatives are band-passed noise; short pauses
//! separate syllables. A low room-noise bed keeps every frame above the
//! digital floor.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::dsp::{Waveform, SAMPLE_RATE_HZ};
use crate::seed;

const FS: f64 = SAMPLE_RATE_HZ as f64;

/// (F1, F2, F3) of a few vowels in Hz.
const VOWELS: [[f64; 3]; 8] = [
    [270.0, 2290.0, 3010.0],
    [390.0, 1990.0, 2550.0],
    [530.0, 1840.0, 2480.0],
    [660.0, 1720.0, 2410.0],
    [730.0, 1090.0, 2440.0],
    [570.0, 840.0, 2410.0],
    [300.0, 870.0, 2240.0],
    [490.0, 1350.0, 1690.0],
];

/// Centre frequency and bandwidth in Hz of fricative noise bands.
const FRICATIVES: [(f64, f64); 4] = [(6000.0, 2500.0), (4200.0, 1800.0), (2800.0, 1500.0), (7000.0, 1500.0)];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerProfile {
    pub id: String,
    pub f0_hz: f64,
    /// Multiplies every formant frequency (vocal-tract length).
    pub formant_scale: f64,
    /// Syllables per second.
    pub rate: f64,
    /// Relative level of aspiration noise mixed into voiced segments.
    pub breathiness: f64,
    /// One-pole glottal tilt coefficient.
    pub tilt: f64,
}

impl SpeakerProfile {
    pub fn random(id: impl Into<String>, global_seed: u64) -> Self {
        let id = id.into();
        let mut rng = ChaCha8Rng::seed_from_u64(seed::derive(global_seed, "speaker", &[&id]));
        let low = rng.random_bool(0.5);
        SpeakerProfile {
            f0_hz: if low {
                rng.random_range(85.0..150.0)
            } else {
                rng.random_range(160.0..260.0)
            },
            formant_scale: if low {
                rng.random_range(0.88..1.02)
            } else {
                rng.random_range(1.02..1.2)
            },
            rate: rng.random_range(3.0..5.5),
            breathiness: rng.random_range(0.01..0.08),
            tilt: rng.random_range(0.85..0.96),
            id,
        }
    }
}

/// Two-pole resonator with unit gain at DC scaled out.
struct Resonator {
    a1: f64,
    a2: f64,
    g: f64,
    y1: f64,
    y2: f64,
}

impl Resonator {
    fn new(freq: f64, bw: f64) -> Self {
        let r = (-PI * bw / FS).exp();
        let theta = 2.0 * PI * freq.min(FS / 2.0 - 100.0) / FS;
        let a1 = 2.0 * r * theta.cos();
        let a2 = -r * r;
        Resonator {
            a1,
            a2,
            g: 1.0 - a1 - a2,
            y1: 0.0,
            y2: 0.0,
        }
    }

    fn retune(&mut self, freq: f64, bw: f64) {
        let n = Resonator::new(freq, bw);
        self.a1 = n.a1;
        self.a2 = n.a2;
        self.g = n.g;
    }

    #[inline]
    fn step(&mut self, x: f64) -> f64 {
        let y = self.g * x + self.a1 * self.y1 + self.a2 * self.y2;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

/// Band-pass resonator normalized to unit peak gain.
struct BandPass {
    a1: f64,
    a2: f64,
    g: f64,
    x2: f64,
    x1: f64,
    y1: f64,
    y2: f64,
}

impl BandPass {
    fn new(freq: f64, bw: f64) -> Self {
        let r = (-PI * bw / FS).exp();
        let theta = 2.0 * PI * freq.min(FS / 2.0 - 200.0) / FS;
        BandPass {
            a1: 2.0 * r * theta.cos(),
            a2: -r * r,
            g: (1.0 - r * r) / 2.0,
            x1: 0.0,
            x2: 0.0,
            y1: 0.0,
            y2: 0.0,
        }
    }

    #[inline]
    fn step(&mut self, x: f64) -> f64 {
        let y = self.g * (x - self.x2) + self.a1 * self.y1 + self.a2 * self.y2;
        self.x2 = self.x1;
        self.x1 = x;
        self.y2 = self.y1;
        self.y1 = y;
        y
    }
}

fn envelope(i: usize, n: usize, ramp: usize) -> f64 {
    let r = ramp.min(n / 2).max(1);
    if i < r {
        0.5 - 0.5 * (PI * i as f64 / r as f64).cos()
    } else if i + r > n {
        0.5 - 0.5 * (PI * (n - i) as f64 / r as f64).cos()
    } else {
        1.0
    }
}

/// `samples` of speech from `speaker`, peak-normalized to 0.5, with a
/// room-noise bed 45 dB below the speech power.
pub fn synthesize(speaker: &SpeakerProfile, samples: usize, seed: u64) -> Waveform {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = vec![0.0; samples];
    let mut formants: Vec<Resonator> = (0..4).map(|_| Resonator::new(500.0, 80.0)).collect();
    let mut glottal = 0.0;
    let mut phase = 0.0;
    let mut pos = 0;
    let syllable = (FS / speaker.rate) as usize;
    while pos < samples {
        // pause
        if rng.random_bool(0.18) {
            pos += rng.random_range(syllable / 4..syllable);
            continue;
        }
        // optional fricative onset
        if rng.random_bool(0.45) {
            let (fc, bw) = FRICATIVES[rng.random_range(0..FRICATIVES.len())];
            let mut bp = BandPass::new(fc * speaker.formant_scale.sqrt(), bw);
            let n = rng.random_range(syllable / 5..syllable / 2);
            let level = rng.random_range(0.15..0.4);
            for i in 0..n {
                if pos + i >= samples {
                    break;
                }
                let e: f64 = StandardNormal.sample(&mut rng);
                out[pos + i] += level * envelope(i, n, n / 4) * bp.step(e);
            }
            pos += n;
        }
        // voiced nucleus with a glide between two vowels
        let v0 = VOWELS[rng.random_range(0..VOWELS.len())];
        let v1 = VOWELS[rng.random_range(0..VOWELS.len())];
        let n = rng.random_range(syllable / 2..syllable + syllable / 3);
        let f0_start = speaker.f0_hz * rng.random_range(0.9..1.15);
        let f0_end = f0_start * rng.random_range(0.8..1.05);
        let level = rng.random_range(0.5..1.0);
        for i in 0..n {
            if pos + i >= samples {
                break;
            }
            let a = i as f64 / n as f64;
            if i % 32 == 0 {
                for (k, r) in formants.iter_mut().enumerate() {
                    let f = if k < 3 {
                        ((1.0 - a) * v0[k] + a * v1[k]) * speaker.formant_scale
                    } else {
                        3500.0 * speaker.formant_scale
                    };
                    r.retune(f, 60.0 + 0.04 * f);
                }
            }
            let f0 = (1.0 - a) * f0_start + a * f0_end;
            let jitter: f64 = StandardNormal.sample(&mut rng);
            phase += f0 * (1.0 + 0.01 * jitter) / FS;
            let pulse = if phase >= 1.0 {
                phase -= 1.0;
                1.0
            } else {
                0.0
            };
            let asp: f64 = StandardNormal.sample(&mut rng);
            glottal = speaker.tilt * glottal + pulse + speaker.breathiness * asp;
            let mut s = glottal - speaker.tilt * 0.5 * glottal;
            for r in formants.iter_mut() {
                s = r.step(s);
            }
            out[pos + i] += level * envelope(i, n, n / 6) * s;
        }
        pos += n;
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v *= 0.5 / peak);
    }
    let p = crate::dsp::mean_square(&out).max(1e-12);
    let bed = (p * 10f64.powf(-45.0 / 10.0)).sqrt();
    for v in out.iter_mut() {
        let e: f64 = StandardNormal.sample(&mut rng);
        *v += bed * e;
    }
    let mut w = Waveform::new(out, SAMPLE_RATE_HZ);
    w.speaker_id = Some(speaker.id.clone());
    w
}
