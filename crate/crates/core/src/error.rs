use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("signal too short: {got} samples, need at least {need}")]
    SignalTooShort { got: usize, need: usize },
    #[error("unsupported sample rate {0} Hz (expected 16000 Hz)")]
    BadSampleRate(u32),
    #[error("recording too short: {frames} frames, need at least {need}")]
    RecordingTooShort { frames: usize, need: usize },
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("invalid configuration: {0}")]
    BadConfig(String),
    #[error("too few frames: {got}, need at least {need}")]
    TooFewFrames { got: usize, need: usize },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("input signal is silent")]
    SilentInput,
    #[error("missing file: {}", .0.display())]
    MissingFile(PathBuf),
    #[error("empty dataset")]
    EmptyDataset,
    #[error("training diverged at epoch {epoch}: validation loss {loss}")]
    DivergedLoss { epoch: usize, loss: f64 },
    #[error("mixture component {0} collapsed after re-seeding")]
    DegenerateComponent(usize),
    #[error("frame count mismatch: {mfcc} feature frames vs {spectra} spectrogram frames")]
    FrameMismatch { mfcc: usize, spectra: usize },
    #[error("dictionary component {0} has no effective weight")]
    EmptyComponent(usize),
    #[error("wrong spectrogram origin: expected {expected}, got {got}")]
    WrongOrigin { expected: String, got: String },
    #[error("normalization stats mismatch: {0}")]
    StatsMismatch(String),
    #[error("training data contains a single class")]
    SingleClass,
    #[error("bad WAV file {}: {reason}", path.display())]
    BadWav { path: PathBuf, reason: String },
    #[error("missing metadata for {0}")]
    MissingMetadata(String),
    #[error("could not draw a split with every device on both sides after {0} attempts")]
    DeviceMissingFromSplit(usize),
    #[error("the denoised regime requires a trained denoiser")]
    MissingDenoiser,
    #[error("variant mismatch: {0}")]
    VariantMismatch(String),
    #[error("empty test set")]
    EmptyTestSet,
    #[error("speaker {0} appears in both training and test data")]
    SpeakerLeak(String),
    #[error("malformed file {}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },
    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    pub fn in_stage(self, stage: &str) -> Self {
        Error::Stage {
            stage: stage.to_string(),
            source: Box::new(self),
        }
    }

    /// Process exit code for the CLI: 2 config, 3 data, 4 divergence.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Stage { source, .. } => source.exit_code(),
            Error::BadConfig(_) | Error::MissingDenoiser | Error::VariantMismatch(_) => 2,
            Error::DivergedLoss { .. } | Error::DegenerateComponent(_) => 4,
            _ => 3,
        }
    }
}
