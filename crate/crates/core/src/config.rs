//! Experiment configuration loaded from TOML.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::classifier::SvmConfig;
use crate::corpus::{Regime, SynthCorpusConfig};
use crate::denoiser::{DenoiserArch, TrainConfig};
use crate::dsp::{MfccConfig, StftConfig};
use crate::error::{Error, Result};
use crate::fingerprint::Variant;
use crate::seed;
use crate::speech::GmmConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CorpusConfig {
    /// Existing manifest to use instead of synthesizing a corpus.
    pub manifest: Option<PathBuf>,
    /// Clean speech WAVs for the speech model when `manifest` is set.
    pub speech_files: Vec<PathBuf>,
    pub train_speakers: usize,
    pub synthetic: SynthCorpusConfig,
}

impl Default for CorpusConfig {
    fn default() -> Self {
        CorpusConfig {
            manifest: None,
            speech_files: Vec::new(),
            train_speakers: 6,
            synthetic: SynthCorpusConfig::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DenoiserConfig {
    #[serde(flatten)]
    pub train: TrainConfig,
    /// Cap on training patch pairs, drawn evenly over recordings and SNRs;
    /// 0 keeps all.
    pub max_pairs: usize,
}

impl Default for DenoiserConfig {
    fn default() -> Self {
        DenoiserConfig {
            train: TrainConfig::default(),
            max_pairs: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentGrid {
    /// Augmentation levels for the Mixed and Denoised regimes and for
    /// denoiser training.
    pub train_snrs: Vec<f64>,
    pub test_snrs: Vec<f64>,
    /// Adds the noiseless test condition.
    pub include_original: bool,
    pub regimes: Vec<Regime>,
    pub variants: Vec<Variant>,
    /// Also evaluates the Clean regime with test-time denoising.
    pub denoise_clean_at_test: bool,
    /// Global seeds of repeated runs; empty means just `seed`.
    pub seeds: Vec<u64>,
}

impl Default for ExperimentGrid {
    fn default() -> Self {
        ExperimentGrid {
            train_snrs: vec![20.0, 25.0, 30.0, 35.0],
            test_snrs: vec![20.0, 25.0, 30.0, 35.0],
            include_original: true,
            regimes: Regime::ALL.to_vec(),
            variants: Variant::ALL.to_vec(),
            denoise_clean_at_test: true,
            seeds: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub seed: u64,
    pub stft: StftConfig,
    pub mfcc: MfccConfig,
    pub corpus: CorpusConfig,
    pub denoiser: DenoiserConfig,
    pub gmm: GmmConfig,
    pub svm: SvmConfig,
    pub experiment: ExperimentGrid,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            seed: 0,
            stft: StftConfig::default(),
            mfcc: MfccConfig::default(),
            corpus: CorpusConfig::default(),
            denoiser: DenoiserConfig::default(),
            gmm: GmmConfig::default(),
            svm: SvmConfig::default(),
            experiment: ExperimentGrid::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let cfg: ExperimentConfig =
            toml::from_str(text).map_err(|e| Error::BadConfig(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| {
            Error::BadConfig(format!("cannot read config {}: {e}", path.display()))
        })?;
        Self::from_toml(&text)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("config serializes")
    }

    /// Short hash of the canonical JSON form; stamped on every artifact.
    pub fn hash(&self) -> String {
        seed::short_hash(&serde_json::to_vec(self).expect("config serializes"))
    }

    /// Global seeds of the runs to perform.
    pub fn run_seeds(&self) -> Vec<u64> {
        if self.experiment.seeds.is_empty() {
            vec![self.seed]
        } else {
            self.experiment.seeds.clone()
        }
    }

    /// Seed for one stage, mixing the global seed with the stage's own.
    pub fn stage_seed(&self, stage: &str, local: u64) -> u64 {
        seed::derive(self.seed, stage, &[&local.to_string()])
    }

    pub fn validate(&self) -> Result<()> {
        self.stft.validate()?;
        self.mfcc.validate()?;
        self.denoiser.train.validate()?;
        self.svm.validate()?;
        self.corpus.synthetic.validate()?;
        let arch: DenoiserArch = self.denoiser.train.arch;
        if arch.patch_side != self.stft.bins() {
            return Err(Error::BadConfig(format!(
                "denoiser patch side {} must equal the number of STFT bins {}",
                arch.patch_side,
                self.stft.bins()
            )));
        }
        if self.mfcc.n_mels > self.stft.bins() {
            return Err(Error::BadConfig("more mel filters than STFT bins".into()));
        }
        if self.gmm.components == 0 {
            return Err(Error::BadConfig("gmm needs at least one component".into()));
        }
        let g = &self.experiment;
        for db in g.train_snrs.iter().chain(&g.test_snrs) {
            if !(0.0..=60.0).contains(db) {
                return Err(Error::BadConfig(format!("SNR {db} dB outside [0, 60]")));
            }
        }
        if g.variants.is_empty() || g.regimes.is_empty() {
            return Err(Error::BadConfig("need at least one variant and one regime".into()));
        }
        if g.test_snrs.is_empty() && !g.include_original {
            return Err(Error::BadConfig("no test conditions".into()));
        }
        if self.corpus.manifest.is_none() && self.corpus.train_speakers >= self.corpus.synthetic.speakers {
            return Err(Error::BadConfig(format!(
                "train_speakers ({}) must be below the number of speakers ({})",
                self.corpus.train_speakers, self.corpus.synthetic.speakers
            )));
        }
        Ok(())
    }
}
