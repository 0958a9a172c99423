//! Calibrated AWGN injection and SNR measurement.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::corpus::{Manifest, ManifestEntry, Provenance};
use crate::dsp::{mean_square, Waveform};
use crate::error::{Error, Result};
use crate::seed;

/// Target SNR. `None` stands for "no noise" (infinite SNR).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SnrSpec {
    pub target_db: Option<f64>,
    pub seed: u64,
}

impl SnrSpec {
    pub fn finite(target_db: f64, seed: u64) -> Result<Self> {
        if !(0.0..=60.0).contains(&target_db) {
            return Err(Error::BadConfig(format!(
                "SNR target {target_db} dB outside [0, 60]"
            )));
        }
        Ok(SnrSpec {
            target_db: Some(target_db),
            seed,
        })
    }

    pub fn infinite() -> Self {
        SnrSpec {
            target_db: None,
            seed: 0,
        }
    }

    pub fn label(&self) -> String {
        match self.target_db {
            Some(db) => format_snr(db),
            None => "Original".to_string(),
        }
    }
}

pub fn format_snr(db: f64) -> String {
    if db.fract() == 0.0 {
        format!("{}dB", db as i64)
    } else {
        format!("{db}dB")
    }
}

/// `10 log10(P_clean / P_(noisy - clean))`, infinite when the residual is 0.
pub fn measure_snr(clean: &Waveform, noisy: &Waveform) -> Result<f64> {
    if clean.len() != noisy.len() {
        return Err(Error::LengthMismatch {
            left: clean.len(),
            right: noisy.len(),
        });
    }
    if clean.sample_rate_hz != noisy.sample_rate_hz {
        return Err(Error::BadSampleRate(noisy.sample_rate_hz));
    }
    let residual = clean
        .samples
        .iter()
        .zip(&noisy.samples)
        .map(|(c, n)| (n - c) * (n - c))
        .sum::<f64>()
        / clean.len().max(1) as f64;
    if residual == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (clean.power() / residual).log10())
}

/// Draws `n` standard normal samples from a seeded ChaCha8 stream.
pub fn gaussian_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..n).map(|_| StandardNormal.sample(&mut rng)).collect()
}

/// Adds white Gaussian noise at the requested SNR over the whole utterance.
///
/// The noise is rescaled by its own empirical power, so the realized SNR
/// matches the target up to rounding. Samples are not clipped.
pub fn inject_awgn(wave: &Waveform, spec: &SnrSpec) -> Result<Waveform> {
    let Some(target) = spec.target_db else {
        return Ok(wave.clone());
    };
    let signal = wave.power();
    if signal <= 0.0 || wave.is_empty() {
        return Err(Error::SilentInput);
    }
    let noise = gaussian_noise(wave.len(), spec.seed);
    let noise_power = mean_square(&noise);
    let gain = (signal / (noise_power * 10f64.powf(target / 10.0))).sqrt();
    let samples = wave
        .samples
        .iter()
        .zip(&noise)
        .map(|(x, n)| x + gain * n)
        .collect();
    Ok(wave.with_samples(samples))
}

/// Removes repeated finite levels (and any infinite level) while keeping the
/// first occurrence order. Returns the kept levels and one warning per drop.
pub fn dedup_levels(levels: &[SnrSpec]) -> (Vec<SnrSpec>, Vec<String>) {
    let mut kept: Vec<SnrSpec> = Vec::new();
    let mut warnings = Vec::new();
    for l in levels {
        match l.target_db {
            None => warnings.push("infinite SNR level ignored: originals are always kept".into()),
            Some(db) => {
                if kept.iter().any(|k| k.target_db == Some(db)) {
                    warnings.push(format!("duplicate SNR level {} dropped", format_snr(db)));
                } else {
                    kept.push(*l);
                }
            }
        }
    }
    (kept, warnings)
}

/// Seed used for the noise realization of one (recording, level) pair.
pub fn entry_seed(global: u64, namespace: &str, recording_id: &str, target_db: f64) -> u64 {
    seed::derive(global, namespace, &[recording_id, &format!("{target_db:.6}")])
}

/// Emits every non-AWGN recording followed by one derived AWGN entry per
/// level. Derived entries point at the parent's file and record parent id,
/// SNR and noise seed.
pub fn augment_manifest(manifest: &Manifest, levels: &[SnrSpec]) -> Result<Manifest> {
    for e in &manifest.entries {
        let path = manifest.resolve(e);
        if e.provenance != Provenance::Awgn && !path.exists() {
            return Err(Error::MissingFile(path));
        }
    }
    Ok(manifest.with_entries(augmented_entries(manifest, levels, "augment")))
}

/// [`augment_manifest`] without touching the filesystem; `namespace` keys the
/// noise seeds.
pub fn augmented_entries(manifest: &Manifest, levels: &[SnrSpec], namespace: &str) -> Vec<ManifestEntry> {
    let (levels, warnings) = dedup_levels(levels);
    for w in warnings {
        log::warn!("{w}");
    }
    let mut entries = Vec::new();
    for e in &manifest.entries {
        if e.provenance == Provenance::Awgn {
            continue;
        }
        entries.push(e.clone());
        for l in &levels {
            entries.push(awgn_entry(e, l, namespace));
        }
    }
    entries
}

/// Noisy copy of `parent` at a finite level.
pub fn awgn_entry(parent: &ManifestEntry, level: &SnrSpec, namespace: &str) -> ManifestEntry {
    let db = level.target_db.expect("finite SNR level");
    ManifestEntry {
        id: format!("{}@{}", parent.id, format_snr(db)),
        path: parent.path.clone(),
        device: parent.device.clone(),
        speaker: parent.speaker.clone(),
        provenance: Provenance::Awgn,
        parent_id: Some(parent.id.clone()),
        snr_db: Some(db),
        seed: Some(entry_seed(level.seed, namespace, &parent.id, db)),
    }
}
