//! Microphone identification from speech recordings, robust to additive
//! white Gaussian noise.
//!
//! The pipeline maps a recording to a log-power spectrogram, optionally
//! removes injected noise with a residual convolutional denoiser working on
//! square spectrogram patches, extracts one of three device fingerprints and
//! classifies it with a one-vs-rest RBF support vector machine.
//!
//! Modules:
//! - [`dsp`]: STFT, patch grids, MFCC and RASTA filtering, WAV I/O.
//! - [`noise`]: calibrated AWGN injection and SNR measurement.
//! - [`denoiser`]: the residual CNN, its gradients and the training loop.
//! - [`speech`]: GMM on RASTA-MFCC frames, spectral dictionary, speech
//!   reconstruction and spectral subtraction.
//! - [`fingerprint`]: channel response, composite and band-energy-difference
//!   features plus z-score normalization.
//! - [`classifier`]: SMO-trained one-vs-rest SVM.
//! - [`corpus`]: manifests, virtual devices, synthetic speakers, splits and
//!   training regimes.
//! - [`eval`]: evaluation, reports and the end-to-end experiment runner.

pub mod classifier;
pub mod config;
pub mod container;
pub mod corpus;
pub mod denoiser;
pub mod dsp;
pub mod error;
pub mod eval;
pub mod fingerprint;
pub mod noise;
pub mod pipeline;
pub mod seed;
pub mod speech;

pub use error::{Error, Result};
