//! Recording-to-fingerprint analysis and the trained identification pipeline.

use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::classifier::{Prediction, SvmModel};
use crate::corpus::Regime;
use crate::denoiser::DenoiserModel;
use crate::dsp::{stft_logpower, Spectrogram, StftConfig, Waveform};
use crate::error::{Error, Result};
use crate::fingerprint::{extract, normalize, Fingerprint, Variant};
use crate::speech::SpeechModel;

/// Spectrogram (denoised or raw) of a recording plus its speech-free residual.
#[derive(Debug, Clone, PartialEq)]
pub struct Analysis {
    pub spectrogram: Spectrogram,
    pub residual: Option<Spectrogram>,
}

/// Borrowed models needed to turn audio into fingerprints.
#[derive(Debug, Clone, Copy)]
pub struct Extractor<'a> {
    pub stft: StftConfig,
    pub denoiser: Option<&'a DenoiserModel>,
    pub speech: Option<&'a SpeechModel>,
}

impl<'a> Extractor<'a> {
    pub fn analyze(&self, wave: &Waveform, denoise: bool, residual: bool) -> Result<Analysis> {
        let mut spec = stft_logpower(wave, &self.stft)?;
        if denoise {
            spec = self
                .denoiser
                .ok_or(Error::MissingDenoiser)?
                .denoise_spectrogram(&spec)?;
        }
        let residual = if residual {
            let speech = self.speech.ok_or_else(|| {
                Error::VariantMismatch("residual fingerprints need a speech model".into())
            })?;
            Some(speech.residual(&spec)?)
        } else {
            None
        };
        Ok(Analysis {
            spectrogram: spec,
            residual,
        })
    }

    /// One fingerprint per requested variant, in order, sharing a single
    /// analysis. Values are rounded to f32 precision, the precision of every
    /// stored feature.
    pub fn fingerprints(
        &self,
        wave: &Waveform,
        denoise: bool,
        variants: &[Variant],
    ) -> Result<Vec<Fingerprint>> {
        let need_residual = variants.iter().any(|v| v.needs_residual());
        let a = self.analyze(wave, denoise, need_residual)?;
        variants
            .iter()
            .map(|&v| {
                let mut f = extract(v, &a.spectrogram, a.residual.as_ref())?;
                f.values.iter_mut().for_each(|x| *x = *x as f32 as f64);
                Ok(f)
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PipelineFile {
    format: String,
    version: u32,
    stft: StftConfig,
    regime: Regime,
    variant: Variant,
    train_speakers: BTreeSet<String>,
    denoiser: bool,
    speech: bool,
}

const PIPELINE_FILE: &str = "pipeline.json";

/// Everything needed to identify the device of a new recording.
#[derive(Debug, Clone)]
pub struct TrainedPipeline {
    pub stft: StftConfig,
    pub denoiser: Option<DenoiserModel>,
    pub speech: Option<SpeechModel>,
    pub svm: SvmModel,
    pub regime: Regime,
    pub train_speakers: BTreeSet<String>,
}

impl TrainedPipeline {
    pub fn new(
        stft: StftConfig,
        denoiser: Option<DenoiserModel>,
        speech: Option<SpeechModel>,
        svm: SvmModel,
        regime: Regime,
        train_speakers: BTreeSet<String>,
    ) -> Result<Self> {
        let p = TrainedPipeline {
            stft,
            denoiser,
            speech,
            svm,
            regime,
            train_speakers,
        };
        p.check()?;
        Ok(p)
    }

    fn check(&self) -> Result<()> {
        let v = self.svm.variant;
        if v.needs_residual() && self.speech.is_none() {
            return Err(Error::VariantMismatch(format!("{v} pipeline without a speech model")));
        }
        if self.regime == Regime::Denoised && self.denoiser.is_none() {
            return Err(Error::MissingDenoiser);
        }
        let expected = v.len_for(self.stft.bins());
        if self.svm.feature_len() != expected {
            return Err(Error::VariantMismatch(format!(
                "{v} model expects {} values, STFT gives {expected}",
                self.svm.feature_len()
            )));
        }
        if let Some(d) = &self.denoiser {
            if d.arch.patch_side != self.stft.bins() {
                return Err(Error::ShapeMismatch("denoiser patch side differs from STFT bins".into()));
            }
        }
        Ok(())
    }

    pub fn variant(&self) -> Variant {
        self.svm.variant
    }

    /// Denoising at test time defaults to on exactly for the Denoised regime.
    pub fn default_denoise(&self) -> bool {
        self.regime == Regime::Denoised
    }

    pub fn extractor(&self) -> Extractor<'_> {
        Extractor {
            stft: self.stft,
            denoiser: self.denoiser.as_ref(),
            speech: self.speech.as_ref(),
        }
    }

    /// Normalized fingerprint of a recording.
    pub fn fingerprint(&self, wave: &Waveform, denoise: bool) -> Result<Fingerprint> {
        let f = self
            .extractor()
            .fingerprints(wave, denoise, &[self.variant()])?
            .remove(0);
        normalize(&f, &self.svm.stats)
    }

    pub fn classify(&self, wave: &Waveform, denoise: bool) -> Result<Prediction> {
        self.svm.predict(&self.fingerprint(wave, denoise)?)
    }

    /// Writes `pipeline.json`, `svm.mcf` and the optional model files.
    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let meta = PipelineFile {
            format: "micid-pipeline".into(),
            version: 1,
            stft: self.stft,
            regime: self.regime,
            variant: self.variant(),
            train_speakers: self.train_speakers.clone(),
            denoiser: self.denoiser.is_some(),
            speech: self.speech.is_some(),
        };
        fs::write(dir.join(PIPELINE_FILE), serde_json::to_vec_pretty(&meta)?)?;
        self.svm.save(&dir.join("svm.mcf"))?;
        if let Some(d) = &self.denoiser {
            d.save(&dir.join("denoiser.mcf"))?;
        }
        if let Some(s) = &self.speech {
            s.save(&dir.join("speech.mcf"))?;
        }
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(PIPELINE_FILE);
        let bytes = fs::read(&path).map_err(|_| Error::MissingFile(path.clone()))?;
        let meta: PipelineFile =
            serde_json::from_slice(&bytes).map_err(|e| Error::format(&path, e.to_string()))?;
        let svm = SvmModel::load(&dir.join("svm.mcf"))?;
        if svm.variant != meta.variant {
            return Err(Error::VariantMismatch(format!(
                "pipeline says {}, model is {}",
                meta.variant, svm.variant
            )));
        }
        let denoiser = if meta.denoiser {
            Some(DenoiserModel::load(&dir.join("denoiser.mcf"))?)
        } else {
            None
        };
        let speech = if meta.speech {
            Some(SpeechModel::load(&dir.join("speech.mcf"))?)
        } else {
            None
        };
        TrainedPipeline::new(meta.stft, denoiser, speech, svm, meta.regime, meta.train_speakers)
    }
}
