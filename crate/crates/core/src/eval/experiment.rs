//! End-to-end experiment: corpus, models, features, classifiers, reports.
//!
//! Each run lives in `out/run-<seed>/`. Every stage writes its artifacts and
//! then a marker `stages/<name>.done` holding the config hash; a rerun with
//! the same config reloads finished stages instead of recomputing them.
//! Models and features are always used in their stored form, so resumed and
//! uninterrupted runs produce identical reports.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use super::{emit_report, score_fingerprints, EvalReport, ReportKey, TEST_NOISE_NAMESPACE};
use crate::classifier::{train_svm, SvmModel};
use crate::config::ExperimentConfig;
use crate::corpus::{
    build_regime, build_synthetic_corpus, cross_speaker_split, load_recording, Manifest,
    ManifestEntry, Provenance, Regime,
};
use crate::denoiser::{train_denoiser, DenoiserModel, EpochLog, PatchPair};
use crate::dsp::wav::read_wav;
use crate::dsp::{split_patches, stft_logpower, Spectrogram};
use crate::error::{Error, Result};
use crate::fingerprint::{
    load_features, normalize, save_features, FeatureRecord, FeatureStats, Fingerprint, Variant,
};
use crate::noise::{entry_seed, inject_awgn, SnrSpec};
use crate::pipeline::Extractor;
use crate::speech::{train_speech_model, SpeechModel};

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub seed: u64,
    pub dir: PathBuf,
    pub reports: Vec<EvalReport>,
    pub denoiser_log: Vec<EpochLog>,
}

#[derive(Debug, Clone)]
pub struct ExperimentOutput {
    /// Counts pooled over runs, one report per grid cell.
    pub reports: Vec<EvalReport>,
    pub runs: Vec<RunOutput>,
}

struct Stages {
    dir: PathBuf,
    hash: String,
}

impl Stages {
    fn done(&self, name: &str) -> bool {
        fs::read_to_string(self.dir.join(format!("{name}.done")))
            .map(|h| h.trim() == self.hash)
            .unwrap_or(false)
    }

    fn finish(&self, name: &str) -> Result<()> {
        fs::create_dir_all(&self.dir)?;
        fs::write(self.dir.join(format!("{name}.done")), &self.hash)?;
        Ok(())
    }

    fn run<T>(&self, name: &str, f: impl FnOnce(bool) -> Result<T>) -> Result<T> {
        let resumed = self.done(name);
        if resumed {
            log::info!("stage {name}: reusing checkpoint");
        } else {
            log::info!("stage {name}: running");
        }
        let out = f(resumed).map_err(|e| e.in_stage(name))?;
        if !resumed {
            self.finish(name)?;
        }
        Ok(out)
    }
}

/// Runs every configured seed and writes pooled reports to `out/report`.
pub fn run_experiment(cfg: &ExperimentConfig, out: &Path) -> Result<ExperimentOutput> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    fs::write(out.join("config.toml"), cfg.to_toml())?;
    let mut runs = Vec::new();
    for seed in cfg.run_seeds() {
        let mut run_cfg = cfg.clone();
        run_cfg.seed = seed;
        run_cfg.experiment.seeds.clear();
        let dir = out.join(format!("run-{seed}"));
        runs.push(run_once(&run_cfg, &dir)?);
    }
    let mut cells: BTreeMap<usize, Vec<&EvalReport>> = BTreeMap::new();
    for run in &runs {
        for (i, r) in run.reports.iter().enumerate() {
            cells.entry(i).or_default().push(r);
        }
    }
    let reports = cells
        .values()
        .map(|rs| EvalReport::pool(rs))
        .collect::<Result<Vec<_>>>()?;
    emit_report(&reports, &out.join("report")).map_err(|e| e.in_stage("report"))?;
    Ok(ExperimentOutput { reports, runs })
}

fn absolute(m: &Manifest) -> Manifest {
    let entries = m
        .entries
        .iter()
        .map(|e| ManifestEntry {
            path: m.resolve(e),
            ..e.clone()
        })
        .collect();
    let mut out = m.with_entries(entries);
    out.root = PathBuf::new();
    out
}

fn needs_denoiser(cfg: &ExperimentConfig) -> bool {
    cfg.experiment.regimes.contains(&Regime::Denoised)
        || (cfg.experiment.denoise_clean_at_test && cfg.experiment.regimes.contains(&Regime::Clean))
}

fn train_levels(cfg: &ExperimentConfig) -> Result<Vec<SnrSpec>> {
    cfg.experiment
        .train_snrs
        .iter()
        .map(|&db| SnrSpec::finite(db, cfg.seed))
        .collect()
}

/// Test conditions in report order: each finite SNR, then the original.
fn test_conditions(cfg: &ExperimentConfig) -> Result<Vec<SnrSpec>> {
    let mut v = cfg
        .experiment
        .test_snrs
        .iter()
        .map(|&db| SnrSpec::finite(db, cfg.seed))
        .collect::<Result<Vec<_>>>()?;
    if cfg.experiment.include_original {
        v.push(SnrSpec::infinite());
    }
    Ok(v)
}

/// Test-time denoising flags evaluated for a regime.
fn eval_flags(cfg: &ExperimentConfig, regime: Regime) -> Vec<bool> {
    match regime {
        Regime::Clean if cfg.experiment.denoise_clean_at_test => vec![false, true],
        Regime::Clean | Regime::Mixed => vec![false],
        Regime::Denoised => vec![true],
    }
}

fn run_once(cfg: &ExperimentConfig, dir: &Path) -> Result<RunOutput> {
    let hash = cfg.hash();
    let stages = Stages {
        dir: dir.join("stages"),
        hash: hash.clone(),
    };
    fs::create_dir_all(dir)?;

    let (manifest, speech_files) = stages.run("corpus", |resumed| {
        let corpus_dir = dir.join("corpus");
        match &cfg.corpus.manifest {
            Some(path) => {
                let m = Manifest::load(path)?;
                m.validate()?;
                Ok((absolute(&m), cfg.corpus.speech_files.clone()))
            }
            None if resumed => {
                let m = Manifest::load(&corpus_dir.join("manifest.jsonl"))?;
                let mut files: Vec<PathBuf> = fs::read_dir(corpus_dir.join("speech"))?
                    .map(|e| e.map(|e| e.path()))
                    .collect::<std::io::Result<_>>()?;
                files.sort();
                Ok((absolute(&m), files))
            }
            None => {
                let c = build_synthetic_corpus(&cfg.corpus.synthetic, cfg.seed, &corpus_dir)?;
                Ok((absolute(&c.manifest), c.speech_files))
            }
        }
    })?;

    let (train, test) = stages.run("split", |resumed| {
        let (tp, ep) = (dir.join("split/train.jsonl"), dir.join("split/test.jsonl"));
        if resumed {
            return Ok((Manifest::load(&tp)?, Manifest::load(&ep)?));
        }
        let (mut tr, mut te, spec) =
            cross_speaker_split(&manifest, cfg.corpus.train_speakers, cfg.stage_seed("split", 0))?;
        spec.validate()?;
        tr.config_hash = hash.clone();
        te.config_hash = hash.clone();
        tr.save(&tp)?;
        te.save(&ep)?;
        Ok((tr, te))
    })?;
    let train_speakers = train.speakers();
    let originals = |m: &Manifest| -> Vec<ManifestEntry> {
        m.entries
            .iter()
            .filter(|e| e.provenance != Provenance::Awgn)
            .cloned()
            .collect()
    };

    let mut denoiser_log = Vec::new();
    let denoiser = if needs_denoiser(cfg) {
        Some(stages.run("denoiser", |resumed| {
            let path = dir.join("models/denoiser.mcf");
            if !resumed {
                let pairs = patch_pairs(cfg, &train, &originals(&train))?;
                let mut tc = cfg.denoiser.train;
                tc.seed = cfg.stage_seed("denoiser", tc.seed);
                let trained = train_denoiser(&pairs, &tc)?;
                trained.model.save(&path)?;
                let mut csv = String::from("epoch,train_loss,validation_loss\n");
                for e in &trained.log {
                    writeln!(csv, "{},{:.6},{:.6}", e.epoch, e.train_loss, e.validation_loss).unwrap();
                }
                fs::write(dir.join("models/denoiser_log.csv"), csv)?;
                denoiser_log = trained.log;
            }
            DenoiserModel::load(&path)
        })?)
    } else {
        None
    };

    let need_speech = cfg.experiment.variants.iter().any(|v| v.needs_residual());
    let speech = if need_speech {
        Some(stages.run("speech", |resumed| {
            let path = dir.join("models/speech.mcf");
            if !resumed {
                if speech_files.is_empty() {
                    return Err(Error::EmptyDataset);
                }
                let spectra = speech_files
                    .par_iter()
                    .map(|p| stft_logpower(&read_wav(p)?, &cfg.stft))
                    .collect::<Result<Vec<Spectrogram>>>()?;
                let mut gc = cfg.gmm;
                gc.seed = cfg.stage_seed("gmm", gc.seed);
                train_speech_model(&spectra, &cfg.mfcc, &gc)?.save(&path)?;
            }
            SpeechModel::load(&path)
        })?)
    } else {
        None
    };

    let extractor = Extractor {
        stft: cfg.stft,
        denoiser: denoiser.as_ref(),
        speech: speech.as_ref(),
    };
    let variants = cfg.experiment.variants.clone();
    let regimes = cfg.experiment.regimes.clone();
    let levels = train_levels(cfg)?;

    let features: BTreeMap<(Variant, Regime), Vec<FeatureRecord>> = stages.run("features", |resumed| {
        let fdir = dir.join("features");
        let path = |v: Variant, r: Regime| fdir.join(format!("{v}_{}.bin", r.as_str()));
        let mut out = BTreeMap::new();
        if resumed {
            for &r in &regimes {
                for &v in &variants {
                    out.insert((v, r), load_features(&path(v, r))?.1);
                }
            }
            return Ok(out);
        }
        let mut tasks = BTreeMap::new();
        let mut per_regime = Vec::new();
        for &r in &regimes {
            let list = build_regime(&train, r, denoiser.as_ref(), &levels)?;
            for t in &list {
                tasks.insert((t.entry.id.clone(), t.denoise), t.entry.clone());
            }
            per_regime.push((r, list));
        }
        let keys: Vec<(&(String, bool), &ManifestEntry)> = tasks.iter().collect();
        let computed: Vec<Vec<Fingerprint>> = keys
            .par_iter()
            .map(|((_, denoise), entry)| {
                let wave = load_recording(&train, entry)?;
                extractor.fingerprints(&wave, *denoise, &variants)
            })
            .collect::<Result<_>>()?;
        let lookup: BTreeMap<(String, bool), &Vec<Fingerprint>> = keys
            .iter()
            .map(|(k, _)| (*k).clone())
            .zip(computed.iter())
            .collect();
        for (r, list) in per_regime {
            for (vi, &v) in variants.iter().enumerate() {
                let recs: Vec<FeatureRecord> = list
                    .iter()
                    .map(|t| FeatureRecord {
                        id: t.entry.id.clone(),
                        device: t.entry.device.clone(),
                        speaker: t.entry.speaker.clone(),
                        fingerprint: lookup[&(t.entry.id.clone(), t.denoise)][vi]
                            .clone()
                            .with_source(t.entry.id.clone()),
                    })
                    .collect();
                save_features(&path(v, r), v, &hash, None, &recs)?;
                out.insert((v, r), load_features(&path(v, r))?.1);
            }
        }
        Ok(out)
    })?;

    let models: BTreeMap<(Variant, Regime), SvmModel> = stages.run("svm", |resumed| {
        let mut out = BTreeMap::new();
        for (&(v, r), recs) in &features {
            let path = dir.join(format!("models/svm_{v}_{}.mcf", r.as_str()));
            if !resumed {
                let raw: Vec<Fingerprint> = recs.iter().map(|x| x.fingerprint.clone()).collect();
                let stats = FeatureStats::fit(&raw)?;
                let normed = raw
                    .iter()
                    .map(|f| normalize(f, &stats))
                    .collect::<Result<Vec<_>>>()?;
                let labels: Vec<String> = recs.iter().map(|x| x.device.clone()).collect();
                train_svm(&normed, &labels, &stats, &cfg.svm)?.save(&path)?;
            }
            out.insert((v, r), SvmModel::load(&path)?);
        }
        Ok(out)
    })?;

    let reports = evaluate_grid(cfg, &test, &train_speakers, &extractor, &models)
        .map_err(|e| e.in_stage("evaluate"))?;
    emit_report(&reports, &dir.join("report")).map_err(|e| e.in_stage("report"))?;
    Ok(RunOutput {
        seed: cfg.seed,
        dir: dir.to_path_buf(),
        reports,
        denoiser_log,
    })
}

/// Noisy/clean patch pairs from the training originals at every training
/// SNR, subsampled to `max_pairs` with a seeded draw.
fn patch_pairs(cfg: &ExperimentConfig, m: &Manifest, entries: &[ManifestEntry]) -> Result<Vec<PatchPair>> {
    let levels = train_levels(cfg)?;
    let side = cfg.stft.bins();
    let per_entry: Vec<usize> = entries
        .iter()
        .map(|e| {
            let n = read_wav(&m.resolve(e))?.len();
            Ok(cfg.stft.frames_for(n) / side)
        })
        .collect::<Result<_>>()?;
    let mut slots: Vec<(usize, usize, usize)> = Vec::new();
    for (ei, &k) in per_entry.iter().enumerate() {
        for li in 0..levels.len() {
            for p in 0..k {
                slots.push((ei, li, p));
            }
        }
    }
    if slots.is_empty() {
        return Err(Error::EmptyDataset);
    }
    if cfg.denoiser.max_pairs > 0 && slots.len() > cfg.denoiser.max_pairs {
        slots.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.stage_seed("patches", 0)));
        slots.truncate(cfg.denoiser.max_pairs);
        slots.sort_unstable();
    }
    let mut wanted: BTreeMap<usize, Vec<(usize, usize)>> = BTreeMap::new();
    for (e, l, p) in slots {
        wanted.entry(e).or_default().push((l, p));
    }
    let groups: Vec<(usize, Vec<(usize, usize)>)> = wanted.into_iter().collect();
    let pairs: Vec<Vec<PatchPair>> = groups
        .par_iter()
        .map(|(ei, picks)| {
            let e = &entries[*ei];
            let wave = load_recording(m, e)?;
            let (clean, _) = split_patches(&stft_logpower(&wave, &cfg.stft)?)?;
            let mut out = Vec::with_capacity(picks.len());
            let mut cache: BTreeMap<usize, Vec<crate::dsp::Matrix>> = BTreeMap::new();
            for &(li, p) in picks {
                if !cache.contains_key(&li) {
                    let db = levels[li].target_db.expect("finite");
                    let s = SnrSpec::finite(db, entry_seed(cfg.seed, "denoiser", &e.id, db))?;
                    let noisy = inject_awgn(&wave, &s)?;
                    let (grid, _) = split_patches(&stft_logpower(&noisy, &cfg.stft)?)?;
                    cache.insert(li, grid.patches);
                }
                out.push(PatchPair {
                    noisy: cache[&li][p].clone(),
                    clean: clean.patches[p].clone(),
                    snr_db: levels[li].target_db.unwrap(),
                    group: e.id.clone(),
                });
            }
            Ok(out)
        })
        .collect::<Result<_>>()?;
    Ok(pairs.into_iter().flatten().collect())
}

fn evaluate_grid(
    cfg: &ExperimentConfig,
    test: &Manifest,
    train_speakers: &BTreeSet<String>,
    extractor: &Extractor<'_>,
    models: &BTreeMap<(Variant, Regime), SvmModel>,
) -> Result<Vec<EvalReport>> {
    let entries: Vec<&ManifestEntry> = test
        .entries
        .iter()
        .filter(|e| e.provenance != Provenance::Awgn)
        .collect();
    if entries.is_empty() {
        return Err(Error::EmptyTestSet);
    }
    for e in &entries {
        if train_speakers.contains(&e.speaker) {
            return Err(Error::SpeakerLeak(e.speaker.clone()));
        }
    }
    let devices: Vec<String> = entries.iter().map(|e| e.device.clone()).collect();
    let variants = &cfg.experiment.variants;
    let regimes = &cfg.experiment.regimes;
    let flags: BTreeSet<bool> = regimes.iter().flat_map(|&r| eval_flags(cfg, r)).collect();
    let hash = cfg.hash();

    let mut reports = Vec::new();
    let mut by_cell: BTreeMap<(Variant, Regime, bool, usize), EvalReport> = BTreeMap::new();
    let conditions = test_conditions(cfg)?;
    for (ci, cond) in conditions.iter().enumerate() {
        for &denoise in &flags {
            let feats: Vec<Vec<Fingerprint>> = entries
                .par_iter()
                .map(|e| {
                    let wave = load_recording(test, e)?;
                    let wave = match cond.target_db {
                        Some(db) => inject_awgn(
                            &wave,
                            &SnrSpec::finite(db, entry_seed(cfg.seed, TEST_NOISE_NAMESPACE, &e.id, db))?,
                        )?,
                        None => wave,
                    };
                    extractor.fingerprints(&wave, denoise, variants)
                })
                .collect::<Result<_>>()?;
            for (vi, &v) in variants.iter().enumerate() {
                let column: Vec<Fingerprint> = feats.iter().map(|f| f[vi].clone()).collect();
                for &r in regimes {
                    if !eval_flags(cfg, r).contains(&denoise) {
                        continue;
                    }
                    let key = ReportKey {
                        variant: v,
                        regime: r,
                        denoise,
                        test: cond.label(),
                    };
                    let rep = score_fingerprints(&models[&(v, r)], key, &column, &devices, vec![cfg.seed], &hash)?;
                    by_cell.insert((v, r, denoise, ci), rep);
                }
            }
        }
    }
    for &v in variants {
        for &r in regimes {
            for denoise in eval_flags(cfg, r) {
                for ci in 0..conditions.len() {
                    reports.push(by_cell.remove(&(v, r, denoise, ci)).expect("cell evaluated"));
                }
            }
        }
    }
    Ok(reports)
}
