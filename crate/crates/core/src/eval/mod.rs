//! Evaluation of trained pipelines, report files and the experiment runner.

mod experiment;
mod report;

pub use experiment::{run_experiment, ExperimentOutput, RunOutput};
pub use report::{confusion_stem, emit_report, write_pgm};

use serde::{Deserialize, Serialize};

use crate::classifier::SvmModel;
use crate::corpus::{load_recording, Manifest, Provenance, Regime};
use crate::dsp::Matrix;
use crate::error::{Error, Result};
use crate::fingerprint::{normalize, Fingerprint, Variant};
use crate::noise::{entry_seed, inject_awgn, SnrSpec};
use crate::pipeline::TrainedPipeline;

/// Namespace of test-time noise seeds, disjoint from augmentation.
pub const TEST_NOISE_NAMESPACE: &str = "test";

/// Accuracy and confusion for one (variant, regime, test condition).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub variant: Variant,
    pub regime: Regime,
    pub denoise: bool,
    /// `"20dB"` style label or `"Original"`.
    pub test: String,
    pub classes: Vec<String>,
    /// Raw counts, rows are true classes.
    pub counts: Vec<Vec<usize>>,
    pub accuracy_percent: f64,
    /// Row-normalized percentages; empty rows stay zero.
    pub confusion: Vec<Vec<f64>>,
    pub recall: Vec<f64>,
    pub seeds: Vec<u64>,
    pub config_hash: String,
}

/// Identifies the grid cell a report belongs to.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct ReportKey {
    pub variant: Variant,
    pub regime: Regime,
    pub denoise: bool,
    pub test: String,
}

impl EvalReport {
    pub fn from_counts(
        key: ReportKey,
        classes: Vec<String>,
        counts: Vec<Vec<usize>>,
        seeds: Vec<u64>,
        config_hash: impl Into<String>,
    ) -> Self {
        let total: usize = counts.iter().flatten().sum();
        let correct: usize = (0..counts.len()).map(|k| counts[k][k]).sum();
        let confusion: Vec<Vec<f64>> = counts
            .iter()
            .map(|row| {
                let n: usize = row.iter().sum();
                row.iter()
                    .map(|&c| if n == 0 { 0.0 } else { 100.0 * c as f64 / n as f64 })
                    .collect()
            })
            .collect();
        let recall = (0..confusion.len()).map(|k| confusion[k][k]).collect();
        EvalReport {
            variant: key.variant,
            regime: key.regime,
            denoise: key.denoise,
            test: key.test,
            classes,
            counts,
            accuracy_percent: if total == 0 {
                0.0
            } else {
                100.0 * correct as f64 / total as f64
            },
            confusion,
            recall,
            seeds,
            config_hash: config_hash.into(),
        }
    }

    /// `truth` and `predicted` index into `classes`.
    pub fn from_predictions(
        key: ReportKey,
        classes: Vec<String>,
        truth: &[usize],
        predicted: &[usize],
        seeds: Vec<u64>,
        config_hash: impl Into<String>,
    ) -> Self {
        let j = classes.len();
        let mut counts = vec![vec![0; j]; j];
        for (&t, &p) in truth.iter().zip(predicted) {
            counts[t][p] += 1;
        }
        Self::from_counts(key, classes, counts, seeds, config_hash)
    }

    pub fn key(&self) -> ReportKey {
        ReportKey {
            variant: self.variant,
            regime: self.regime,
            denoise: self.denoise,
            test: self.test.clone(),
        }
    }

    pub fn total(&self) -> usize {
        self.counts.iter().flatten().sum()
    }

    pub fn confusion_matrix(&self) -> Matrix {
        let j = self.classes.len();
        Matrix::from_fn(j, j, |r, c| self.confusion[r][c])
    }

    /// Pools the counts of reports for the same cell (e.g. several seeds).
    pub fn pool(reports: &[&EvalReport]) -> Result<EvalReport> {
        let first = reports.first().ok_or(Error::EmptyTestSet)?;
        let j = first.classes.len();
        let mut counts = vec![vec![0; j]; j];
        let mut seeds = Vec::new();
        for r in reports {
            if r.key() != first.key() || r.classes != first.classes {
                return Err(Error::ShapeMismatch("pooling reports of different cells".into()));
            }
            for (acc, row) in counts.iter_mut().zip(&r.counts) {
                for (a, c) in acc.iter_mut().zip(row) {
                    *a += c;
                }
            }
            seeds.extend(&r.seeds);
        }
        Ok(Self::from_counts(
            first.key(),
            first.classes.clone(),
            counts,
            seeds,
            first.config_hash.clone(),
        ))
    }
}

/// Classifies already-extracted (unnormalized) fingerprints.
pub fn score_fingerprints(
    svm: &SvmModel,
    key: ReportKey,
    features: &[Fingerprint],
    devices: &[String],
    seeds: Vec<u64>,
    config_hash: &str,
) -> Result<EvalReport> {
    if features.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    if key.variant != svm.variant {
        return Err(Error::VariantMismatch(format!(
            "evaluating {} with a {} model",
            key.variant, svm.variant
        )));
    }
    let mut truth = Vec::with_capacity(features.len());
    let mut pred = Vec::with_capacity(features.len());
    for (f, d) in features.iter().zip(devices) {
        let t = svm
            .classes
            .binary_search(d)
            .map_err(|_| Error::MissingMetadata(format!("device {d} unknown to the classifier")))?;
        truth.push(t);
        pred.push(svm.predict(&normalize(f, &svm.stats)?)?.class_index);
    }
    Ok(EvalReport::from_predictions(
        key,
        svm.classes.clone(),
        &truth,
        &pred,
        seeds,
        config_hash,
    ))
}

/// Fails if any test speaker was seen in training.
pub fn check_speaker_leak<'a>(
    pipeline: &TrainedPipeline,
    speakers: impl IntoIterator<Item = &'a String>,
) -> Result<()> {
    for s in speakers {
        if pipeline.train_speakers.contains(s) {
            return Err(Error::SpeakerLeak(s.clone()));
        }
    }
    Ok(())
}

/// Adds test noise (seeded in its own namespace), optionally denoises,
/// fingerprints, normalizes and classifies every original test recording.
pub fn evaluate(
    pipeline: &TrainedPipeline,
    test: &Manifest,
    test_snr: &SnrSpec,
    denoise_at_test: bool,
) -> Result<EvalReport> {
    let entries: Vec<_> = test
        .entries
        .iter()
        .filter(|e| e.provenance != Provenance::Awgn)
        .collect();
    if entries.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    check_speaker_leak(pipeline, entries.iter().map(|e| &e.speaker))?;
    use rayon::prelude::*;
    let features: Vec<Fingerprint> = entries
        .par_iter()
        .map(|e| {
            let wave = load_recording(test, e)?;
            let wave = match test_snr.target_db {
                Some(db) => inject_awgn(
                    &wave,
                    &SnrSpec::finite(db, entry_seed(test_snr.seed, TEST_NOISE_NAMESPACE, &e.id, db))?,
                )?,
                None => wave,
            };
            Ok(pipeline
                .extractor()
                .fingerprints(&wave, denoise_at_test, &[pipeline.variant()])?
                .remove(0))
        })
        .collect::<Result<_>>()?;
    let devices: Vec<String> = entries.iter().map(|e| e.device.clone()).collect();
    let key = ReportKey {
        variant: pipeline.variant(),
        regime: pipeline.regime,
        denoise: denoise_at_test,
        test: test_snr.label(),
    };
    score_fingerprints(&pipeline.svm, key, &features, &devices, vec![test_snr.seed], &test.config_hash)
}
