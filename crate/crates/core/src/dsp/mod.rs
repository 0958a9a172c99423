//! Deterministic signal-processing kernels.

mod matrix;
pub mod mfcc;
pub mod patches;
pub mod rasta;
pub mod stft;
pub mod wav;

pub use matrix::Matrix;
pub use mfcc::{mfcc, MfccConfig, MfccSequence};
pub use patches::{assemble_patches, split_patches, PatchGrid};
pub use rasta::rasta_filter;
pub use stft::{stft_logpower, StftConfig};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The only sample rate accepted by pipeline entry points.
pub const SAMPLE_RATE_HZ: u32 = 16_000;

/// Default dB floor applied to log-power values.
pub const DEFAULT_FLOOR_DB: f64 = -120.0;

/// Mono PCM audio.
#[derive(Debug, Clone, PartialEq)]
pub struct Waveform {
    pub samples: Vec<f64>,
    pub sample_rate_hz: u32,
    pub speaker_id: Option<String>,
    pub device_label: Option<String>,
}

impl Waveform {
    pub fn new(samples: Vec<f64>, sample_rate_hz: u32) -> Self {
        Waveform {
            samples,
            sample_rate_hz,
            speaker_id: None,
            device_label: None,
        }
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_secs(&self) -> f64 {
        self.samples.len() as f64 / self.sample_rate_hz as f64
    }

    /// Mean squared amplitude.
    pub fn power(&self) -> f64 {
        mean_square(&self.samples)
    }

    pub fn with_samples(&self, samples: Vec<f64>) -> Self {
        Waveform {
            samples,
            sample_rate_hz: self.sample_rate_hz,
            speaker_id: self.speaker_id.clone(),
            device_label: self.device_label.clone(),
        }
    }

    pub(crate) fn check_rate(&self) -> Result<()> {
        if self.sample_rate_hz != SAMPLE_RATE_HZ {
            return Err(Error::BadSampleRate(self.sample_rate_hz));
        }
        Ok(())
    }
}

pub(crate) fn mean_square(x: &[f64]) -> f64 {
    if x.is_empty() {
        return 0.0;
    }
    x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64
}

/// What a spectrogram represents in the pipeline.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Origin {
    Raw,
    Denoised,
    Residual,
    SpeechEstimate,
}

impl Origin {
    pub fn as_str(self) -> &'static str {
        match self {
            Origin::Raw => "raw",
            Origin::Denoised => "denoised",
            Origin::Residual => "residual",
            Origin::SpeechEstimate => "speech_estimate",
        }
    }
}

/// Log-power spectrogram: rows are frequency bins, columns are frames.
///
/// Cells hold dB values that never fall below `floor_db`, except for
/// [`Origin::Residual`] spectrograms which are differences of normalized
/// spectrograms and may take any finite value.
#[derive(Debug, Clone, PartialEq)]
pub struct Spectrogram {
    pub values: Matrix,
    pub bin_hz: f64,
    pub floor_db: f64,
    pub origin: Origin,
}

impl Spectrogram {
    pub fn new(values: Matrix, bin_hz: f64, floor_db: f64, origin: Origin) -> Self {
        Spectrogram {
            values,
            bin_hz,
            floor_db,
            origin,
        }
    }

    pub fn bins(&self) -> usize {
        self.values.rows()
    }

    pub fn frames(&self) -> usize {
        self.values.cols()
    }

    pub fn with_values(&self, values: Matrix, origin: Origin) -> Self {
        Spectrogram {
            values,
            bin_hz: self.bin_hz,
            floor_db: self.floor_db,
            origin,
        }
    }

    pub fn clamp_floor(&mut self) {
        let floor = self.floor_db;
        for v in self.values.as_mut_slice() {
            if *v < floor || v.is_nan() {
                *v = floor;
            }
        }
    }

    pub(crate) fn same_shape(&self, other: &Spectrogram) -> Result<()> {
        if self.bins() != other.bins() || self.frames() != other.frames() {
            return Err(Error::ShapeMismatch(format!(
                "{}x{} vs {}x{}",
                self.bins(),
                self.frames(),
                other.bins(),
                other.frames()
            )));
        }
        Ok(())
    }
}
