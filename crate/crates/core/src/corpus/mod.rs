//! Recordings, manifests, virtual devices, speaker splits and training
//! regimes.

mod device;
mod manifest;
mod synth;

pub use device::{
    design_fir, fir_filter, natural_spline, power_response_db, response_db, simulate_device,
    VirtualDevice, FIR_LEN,
};
pub use manifest::{
    load_sidecar, save_sidecar, Manifest, ManifestEntry, Provenance, SidecarRecord,
    MANIFEST_FORMAT, MANIFEST_VERSION,
};
pub use synth::{synthesize, SpeakerProfile};

use std::collections::BTreeSet;
use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::denoiser::DenoiserModel;
use crate::dsp::wav::{read_wav, write_wav};
use crate::dsp::{StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::noise::{augmented_entries, inject_awgn, SnrSpec};
use crate::seed;

const MAX_SPLIT_DRAWS: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Clean,
    Mixed,
    Denoised,
}

impl Regime {
    pub const ALL: [Regime; 3] = [Regime::Clean, Regime::Mixed, Regime::Denoised];

    pub fn as_str(self) -> &'static str {
        match self {
            Regime::Clean => "clean",
            Regime::Mixed => "mixed",
            Regime::Denoised => "denoised",
        }
    }
}

impl fmt::Display for Regime {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Regime::Clean => "Clean",
            Regime::Mixed => "Mixed",
            Regime::Denoised => "Denoised",
        };
        f.write_str(s)
    }
}

impl FromStr for Regime {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "clean" => Ok(Regime::Clean),
            "mixed" => Ok(Regime::Mixed),
            "denoised" => Ok(Regime::Denoised),
            other => Err(Error::BadConfig(format!("unknown regime `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SplitSpec {
    pub train_speakers: BTreeSet<String>,
    pub test_speakers: BTreeSet<String>,
    pub seed: u64,
}

impl SplitSpec {
    /// Disjoint, both sides non-empty.
    pub fn validate(&self) -> Result<()> {
        if self.train_speakers.is_empty() || self.test_speakers.is_empty() {
            return Err(Error::BadConfig("split sides must be non-empty".into()));
        }
        if let Some(s) = self.train_speakers.intersection(&self.test_speakers).next() {
            return Err(Error::SpeakerLeak(s.clone()));
        }
        Ok(())
    }
}

/// Speaker-disjoint train/test manifests with every device on both sides.
///
/// Speakers are shuffled with a seed derived from `seed`; if some device
/// ends up missing from one side, up to ten derived seeds are tried.
pub fn cross_speaker_split(
    m: &Manifest,
    n_train: usize,
    seed: u64,
) -> Result<(Manifest, Manifest, SplitSpec)> {
    let speakers: Vec<String> = m.speakers().into_iter().collect();
    if n_train == 0 || n_train >= speakers.len() {
        return Err(Error::BadConfig(format!(
            "n_train must be in 1..{}, got {n_train}",
            speakers.len()
        )));
    }
    let devices = m.devices();
    for attempt in 0..MAX_SPLIT_DRAWS {
        let mut order = speakers.clone();
        let s = seed::derive(seed, "split", &[&attempt.to_string()]);
        order.shuffle(&mut ChaCha8Rng::seed_from_u64(s));
        let train_speakers: BTreeSet<String> = order[..n_train].iter().cloned().collect();
        let test_speakers: BTreeSet<String> = order[n_train..].iter().cloned().collect();
        let (train, test): (Vec<_>, Vec<_>) = m
            .entries
            .iter()
            .cloned()
            .partition(|e| train_speakers.contains(&e.speaker));
        let train = m.with_entries(train);
        let test = m.with_entries(test);
        if train.devices() == devices && test.devices() == devices {
            let spec = SplitSpec {
                train_speakers,
                test_speakers,
                seed,
            };
            return Ok((train, test, spec));
        }
    }
    Err(Error::DeviceMissingFromSplit(MAX_SPLIT_DRAWS))
}

/// One feature-extraction job.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtractionTask {
    pub entry: ManifestEntry,
    pub denoise: bool,
}

/// Work list for a training regime. `levels` carry the global seed used to
/// derive per-recording noise seeds.
pub fn build_regime(
    train: &Manifest,
    regime: Regime,
    denoiser: Option<&DenoiserModel>,
    levels: &[SnrSpec],
) -> Result<Vec<ExtractionTask>> {
    if regime == Regime::Denoised && denoiser.is_none() {
        return Err(Error::MissingDenoiser);
    }
    let entries = match regime {
        Regime::Clean => train
            .entries
            .iter()
            .filter(|e| e.provenance != Provenance::Awgn)
            .cloned()
            .collect(),
        Regime::Mixed | Regime::Denoised => augmented_entries(train, levels, "augment"),
    };
    let denoise = regime == Regime::Denoised;
    Ok(entries
        .into_iter()
        .map(|entry| ExtractionTask { entry, denoise })
        .collect())
}

/// Reads an entry's audio, regenerating AWGN copies from their parent file.
pub fn load_recording(m: &Manifest, e: &ManifestEntry) -> Result<Waveform> {
    let mut w = read_wav(&m.resolve(e))?;
    if e.provenance == Provenance::Awgn {
        let (Some(db), Some(s)) = (e.snr_db, e.seed) else {
            return Err(Error::MissingMetadata(format!("{}: awgn entry without snr/seed", e.id)));
        };
        w = inject_awgn(&w, &SnrSpec::finite(db, s)?)?;
    }
    w.speaker_id = Some(e.speaker.clone());
    w.device_label = Some(e.device.clone());
    Ok(w)
}

/// Builds a manifest from WAV files labelled by a sidecar. Sidecar paths are
/// relative to the sidecar's directory; every listed file must have a record.
pub fn ingest(paths: &[PathBuf], sidecar: &Path, seed: u64) -> Result<Manifest> {
    if paths.is_empty() {
        log::warn!("no input files; manifest is empty");
        return Ok(Manifest::new(Vec::new(), seed, ""));
    }
    let root = sidecar.parent().map(Path::to_path_buf).unwrap_or_default();
    let records = load_sidecar(sidecar)?;
    let key = |p: &Path| fs::canonicalize(p).unwrap_or_else(|_| p.to_path_buf());
    let indexed: Vec<(PathBuf, &SidecarRecord)> = records
        .iter()
        .map(|r| {
            let p = if r.path.is_absolute() {
                r.path.clone()
            } else {
                root.join(&r.path)
            };
            (key(&p), r)
        })
        .collect();
    let mut entries = Vec::with_capacity(paths.len());
    for path in paths {
        if !path.exists() {
            return Err(Error::MissingFile(path.clone()));
        }
        read_wav(path)?;
        let k = key(path);
        let rec = indexed
            .iter()
            .find(|(p, _)| *p == k)
            .map(|(_, r)| *r)
            .ok_or_else(|| Error::MissingMetadata(path.display().to_string()))?;
        entries.push(ManifestEntry {
            id: rec.id.clone(),
            path: k,
            device: rec.device.clone(),
            speaker: rec.speaker.clone(),
            provenance: Provenance::Original,
            parent_id: None,
            snr_db: None,
            seed: None,
        });
    }
    let hash = seed::short_hash(
        entries
            .iter()
            .map(|e| e.id.as_str())
            .collect::<Vec<_>>()
            .join("\n")
            .as_bytes(),
    );
    let m = Manifest::new(entries, seed, hash);
    m.validate()?;
    Ok(m)
}

/// Length in samples giving exactly `patches` full patches for `stft`.
pub fn samples_for_patches(stft: &StftConfig, patches: usize) -> usize {
    stft.window_len + stft.hop() * (patches * stft.bins() - 1)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SynthCorpusConfig {
    pub devices: usize,
    pub speakers: usize,
    pub utterances: usize,
    pub utterance_samples: usize,
    /// Separate talkers whose clean speech trains the speech model.
    pub speech_speakers: usize,
    pub speech_secs: f64,
}

impl Default for SynthCorpusConfig {
    fn default() -> Self {
        SynthCorpusConfig {
            devices: 6,
            speakers: 8,
            utterances: 4,
            utterance_samples: 131_328,
            speech_speakers: 6,
            speech_secs: 600.0,
        }
    }
}

impl SynthCorpusConfig {
    pub fn validate(&self) -> Result<()> {
        if self.devices < 2 || self.speakers < 2 || self.utterances < 1 {
            return Err(Error::BadConfig(
                "synthetic corpus needs >= 2 devices, >= 2 speakers, >= 1 utterance".into(),
            ));
        }
        if self.utterance_samples < 1024 || self.speech_speakers == 0 || !(self.speech_secs > 0.0) {
            return Err(Error::BadConfig("synthetic corpus lengths must be positive".into()));
        }
        Ok(())
    }
}

/// Output of [`build_synthetic_corpus`].
#[derive(Debug, Clone, PartialEq)]
pub struct SynthCorpus {
    pub manifest: Manifest,
    pub devices: Vec<VirtualDevice>,
    pub speech_files: Vec<PathBuf>,
}

pub fn device_label(i: usize) -> String {
    format!("dev{:02}", i + 1)
}

pub fn speaker_label(i: usize) -> String {
    format!("spk{:02}", i + 1)
}

/// Synthesizes every (device, speaker, utterance) recording, a clean speech
/// track for the speech model, and writes WAVs, `manifest.jsonl`,
/// `sidecar.jsonl` and `devices.json` under `dir`.
pub fn build_synthetic_corpus(cfg: &SynthCorpusConfig, seed: u64, dir: &Path) -> Result<SynthCorpus> {
    cfg.validate()?;
    let rec_dir = dir.join("recordings");
    let speech_dir = dir.join("speech");
    fs::create_dir_all(&rec_dir)?;
    fs::create_dir_all(&speech_dir)?;
    let devices: Vec<VirtualDevice> = (0..cfg.devices)
        .map(|d| VirtualDevice::random(device_label(d), seed))
        .collect();
    for d in &devices {
        d.validate()?;
    }
    let speakers: Vec<SpeakerProfile> = (0..cfg.speakers)
        .map(|s| SpeakerProfile::random(speaker_label(s), seed))
        .collect();
    let jobs: Vec<(usize, usize)> = (0..cfg.speakers)
        .flat_map(|s| (0..cfg.utterances).map(move |u| (s, u)))
        .collect();
    use rayon::prelude::*;
    let written: Vec<Vec<ManifestEntry>> = jobs
        .par_iter()
        .map(|&(s, u)| -> Result<Vec<ManifestEntry>> {
            let spk = &speakers[s];
            let us = seed::derive(seed, "utterance", &[&spk.id, &u.to_string()]);
            let clean = synthesize(spk, cfg.utterance_samples, us);
            let mut out = Vec::with_capacity(devices.len());
            for dev in &devices {
                let id = format!("{}-{}-u{}", dev.label, spk.id, u + 1);
                let ds = seed::derive(seed, "self-noise", &[&id]);
                let w = simulate_device(&clean, dev, ds)?;
                let rel = PathBuf::from("recordings").join(format!("{id}.wav"));
                write_wav(&dir.join(&rel), &w)?;
                out.push(ManifestEntry {
                    id,
                    path: rel,
                    device: dev.label.clone(),
                    speaker: spk.id.clone(),
                    provenance: Provenance::Simulated,
                    parent_id: None,
                    snr_db: None,
                    seed: Some(ds),
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    let mut entries: Vec<ManifestEntry> = written.into_iter().flatten().collect();
    entries.sort_by(|a, b| a.id.cmp(&b.id));

    let per = (cfg.speech_secs * 16_000.0 / cfg.speech_speakers as f64).ceil() as usize;
    let speech_files: Vec<PathBuf> = (0..cfg.speech_speakers)
        .into_par_iter()
        .map(|k| -> Result<PathBuf> {
            let spk = SpeakerProfile::random(format!("talker{:02}", k + 1), seed);
            let w = synthesize(&spk, per, seed::derive(seed, "speech-track", &[&spk.id]));
            let path = speech_dir.join(format!("{}.wav", spk.id));
            write_wav(&path, &w)?;
            Ok(path)
        })
        .collect::<Result<_>>()?;

    let hash = seed::short_hash(&serde_json::to_vec(cfg)?);
    let mut manifest = Manifest::new(entries, seed, hash);
    manifest.root = dir.to_path_buf();
    manifest.validate()?;
    manifest.save(&dir.join("manifest.jsonl"))?;
    let sidecar: Vec<SidecarRecord> = manifest
        .entries
        .iter()
        .map(|e| SidecarRecord {
            id: e.id.clone(),
            path: e.path.clone(),
            device: e.device.clone(),
            speaker: e.speaker.clone(),
            parent_id: None,
            snr_db: None,
            seed: e.seed,
        })
        .collect();
    save_sidecar(&dir.join("sidecar.jsonl"), &sidecar)?;
    fs::write(dir.join("devices.json"), serde_json::to_vec_pretty(&devices)?)?;
    Ok(SynthCorpus {
        manifest,
        devices,
        speech_files,
    })
}

#[cfg(test)]
mod tests {
    use super::manifest::tests::entry;
    use super::*;

    fn grid(devices: usize, speakers: usize, utts: usize) -> Manifest {
        let mut e = Vec::new();
        for d in 0..devices {
            for s in 0..speakers {
                for u in 0..utts {
                    e.push(entry(&format!("d{d}-s{s}-{u}"), &format!("d{d}"), &format!("s{s}")));
                }
            }
        }
        Manifest::new(e, 1, "h")
    }

    #[test]
    fn split_sizes_and_determinism() {
        let m = grid(3, 8, 2);
        let (tr, te, spec) = cross_speaker_split(&m, 6, 42).unwrap();
        assert_eq!(spec.train_speakers.len(), 6);
        assert_eq!(spec.test_speakers.len(), 2);
        spec.validate().unwrap();
        assert_eq!(tr.devices(), m.devices());
        assert_eq!(te.devices(), m.devices());
        assert_eq!(tr.len() + te.len(), m.len());
        let again = cross_speaker_split(&m, 6, 42).unwrap();
        assert_eq!(again.2, spec);
        assert!(matches!(cross_speaker_split(&m, 8, 42), Err(Error::BadConfig(_))));
    }

    #[test]
    fn split_fails_when_devices_cannot_cover_both_sides() {
        let mut e = Vec::new();
        for s in 0..4 {
            e.push(entry(&format!("a{s}"), "a", &format!("s{s}")));
        }
        e.push(entry("b0", "b", "s0"));
        e.push(entry("b1", "b", "s1"));
        e.push(entry("c2", "c", "s2"));
        e.push(entry("c3", "c", "s3"));
        let m = Manifest::new(e, 0, "h");
        // b and c never share a speaker, so a 3/1 split always strands one of them
        assert!(matches!(
            cross_speaker_split(&m, 3, 5),
            Err(Error::DeviceMissingFromSplit(10))
        ));
    }

    #[test]
    fn regime_cardinalities() {
        let m = grid(4, 5, 5);
        let levels: Vec<SnrSpec> = [20.0, 25.0, 30.0, 35.0]
            .iter()
            .map(|&d| SnrSpec::finite(d, 7).unwrap())
            .collect();
        let clean = build_regime(&m, Regime::Clean, None, &levels).unwrap();
        assert_eq!(clean.len(), 100);
        assert!(clean.iter().all(|t| !t.denoise));
        let mixed = build_regime(&m, Regime::Mixed, None, &levels).unwrap();
        assert_eq!(mixed.len(), 500);
        assert!(mixed.iter().all(|t| !t.denoise));
        assert!(matches!(
            build_regime(&m, Regime::Denoised, None, &levels),
            Err(Error::MissingDenoiser)
        ));
        let dn = DenoiserModel::zeros(crate::denoiser::DenoiserArch {
            depth: 2,
            channels: 2,
            patch_side: 8,
        });
        let den = build_regime(&m, Regime::Denoised, Some(&dn), &levels).unwrap();
        assert_eq!(den.len(), 500);
        assert!(den.iter().all(|t| t.denoise));
    }

    #[test]
    fn patch_aligned_lengths() {
        let s = StftConfig::new(512).unwrap();
        assert_eq!(samples_for_patches(&s, 1), 65_792);
        assert_eq!(s.frames_for(samples_for_patches(&s, 1)), 256);
        let s = StftConfig::new(128).unwrap();
        assert_eq!(s.frames_for(samples_for_patches(&s, 8)), 512);
    }
}
