use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use micid::classifier::train_svm;
use micid::config::ExperimentConfig;
use micid::corpus::{build_regime, build_synthetic_corpus, ingest, load_recording, Manifest, Regime};
use micid::denoiser::{train_denoiser, DenoiserModel, PatchPair};
use micid::dsp::wav::read_wav;
use micid::dsp::{split_patches, stft_logpower};
use micid::eval::{emit_report, evaluate, run_experiment, EvalReport};
use micid::fingerprint::{
    load_features, normalize, save_features, FeatureRecord, FeatureStats, Variant,
};
use micid::noise::{entry_seed, inject_awgn, SnrSpec};
use micid::pipeline::{Extractor, TrainedPipeline};
use micid::speech::{train_speech_model, SpeechModel};
use micid::{Error, Result};

#[derive(Parser)]
#[command(name = "micid", version, about = "Microphone identification from speech recordings")]
struct Cli {
    /// TOML experiment configuration.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured global seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Worker threads (defaults to the number of cores).
    #[arg(long, global = true)]
    jobs: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Synthesize the virtual-device corpus, or ingest WAVs labelled by a sidecar.
    BuildCorpus {
        #[arg(long, requires = "sidecar")]
        wav: Vec<PathBuf>,
        #[arg(long)]
        sidecar: Option<PathBuf>,
    },
    /// Train the spectrogram denoiser on AWGN copies of a manifest's recordings.
    TrainDenoiser {
        #[arg(long)]
        manifest: PathBuf,
    },
    /// Train the speech GMM and dictionary on clean speech WAVs.
    TrainGmm {
        #[arg(long, required = true)]
        speech: Vec<PathBuf>,
    },
    /// Extract fingerprints for one training regime.
    ExtractFeatures {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "clean")]
        regime: Regime,
        #[arg(long)]
        denoiser: Option<PathBuf>,
        #[arg(long)]
        speech: Option<PathBuf>,
    },
    /// Train a classifier from a feature dump and write a pipeline directory.
    TrainSvm {
        #[arg(long)]
        features: PathBuf,
        #[arg(long, default_value = "clean")]
        regime: Regime,
        #[arg(long)]
        denoiser: Option<PathBuf>,
        #[arg(long)]
        speech: Option<PathBuf>,
    },
    /// Evaluate a pipeline on a test manifest at one SNR ("original" for none).
    Evaluate {
        #[arg(long)]
        pipeline: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long, default_value = "original")]
        snr: String,
        /// Denoise test recordings (defaults to on for the Denoised regime).
        #[arg(long)]
        denoise: Option<bool>,
    },
    /// Render CSV tables and PGM images from evaluation JSON files.
    Report {
        #[arg(required = true)]
        reports: Vec<PathBuf>,
    },
    /// Run the whole experiment grid.
    RunExperiment,
}

fn load_config(cli: &Cli) -> Result<ExperimentConfig> {
    let mut cfg = match &cli.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    Ok(cfg)
}

fn parse_snr(s: &str, seed: u64) -> Result<SnrSpec> {
    if s.eq_ignore_ascii_case("original") || s.eq_ignore_ascii_case("inf") {
        return Ok(SnrSpec::infinite());
    }
    let db: f64 = s
        .trim_end_matches("dB")
        .parse()
        .map_err(|_| Error::BadConfig(format!("bad SNR `{s}`")))?;
    SnrSpec::finite(db, seed)
}

fn opt_load<T>(p: &Option<PathBuf>, f: impl Fn(&Path) -> Result<T>) -> Result<Option<T>> {
    p.as_deref().map(f).transpose()
}

fn run(cli: &Cli) -> Result<()> {
    let cfg = load_config(cli)?;
    let out = &cli.out;
    std::fs::create_dir_all(out)?;
    match &cli.command {
        Command::BuildCorpus { wav, sidecar } => {
            let m = match sidecar {
                Some(sc) => {
                    let m = ingest(wav, sc, cfg.seed)?;
                    m.save(&out.join("manifest.jsonl"))?;
                    m
                }
                None => build_synthetic_corpus(&cfg.corpus.synthetic, cfg.seed, out)?.manifest,
            };
            println!("{} recordings, {} devices, {} speakers", m.len(), m.devices().len(), m.speakers().len());
        }
        Command::TrainDenoiser { manifest } => {
            let m = Manifest::load(manifest)?;
            let mut pairs = Vec::new();
            for e in &m.entries {
                let wave = load_recording(&m, e)?;
                let (clean, _) = split_patches(&stft_logpower(&wave, &cfg.stft)?)?;
                for &db in &cfg.experiment.train_snrs {
                    let s = SnrSpec::finite(db, entry_seed(cfg.seed, "denoiser", &e.id, db))?;
                    let (noisy, _) = split_patches(&stft_logpower(&inject_awgn(&wave, &s)?, &cfg.stft)?)?;
                    for (n, c) in noisy.patches.into_iter().zip(&clean.patches) {
                        pairs.push(PatchPair { noisy: n, clean: c.clone(), snr_db: db, group: e.id.clone() });
                    }
                }
            }
            let mut tc = cfg.denoiser.train;
            tc.seed = cfg.stage_seed("denoiser", tc.seed);
            let trained = train_denoiser(&pairs, &tc)?;
            for e in &trained.log {
                println!("epoch {:3}  train {:.6}  validation {:.6}", e.epoch, e.train_loss, e.validation_loss);
            }
            trained.model.save(&out.join("denoiser.mcf"))?;
        }
        Command::TrainGmm { speech } => {
            let spectra = speech
                .iter()
                .map(|p| stft_logpower(&read_wav(p)?, &cfg.stft))
                .collect::<Result<Vec<_>>>()?;
            let mut gc = cfg.gmm;
            gc.seed = cfg.stage_seed("gmm", gc.seed);
            let model = train_speech_model(&spectra, &cfg.mfcc, &gc)?;
            println!("{} iterations, log-likelihood {:.4}", model.gmm.iterations, model.gmm.final_log_likelihood());
            model.save(&out.join("speech.mcf"))?;
        }
        Command::ExtractFeatures { manifest, regime, denoiser, speech } => {
            let m = Manifest::load(manifest)?;
            let denoiser = opt_load(denoiser, DenoiserModel::load)?;
            let speech = opt_load(speech, SpeechModel::load)?;
            let variants: Vec<Variant> = cfg
                .experiment
                .variants
                .iter()
                .copied()
                .filter(|v| speech.is_some() || !v.needs_residual())
                .collect();
            let levels = cfg
                .experiment
                .train_snrs
                .iter()
                .map(|&db| SnrSpec::finite(db, cfg.seed))
                .collect::<Result<Vec<_>>>()?;
            let tasks = build_regime(&m, *regime, denoiser.as_ref(), &levels)?;
            let ex = Extractor { stft: cfg.stft, denoiser: denoiser.as_ref(), speech: speech.as_ref() };
            let mut per_variant: Vec<Vec<FeatureRecord>> = vec![Vec::new(); variants.len()];
            for t in &tasks {
                let fs = ex.fingerprints(&load_recording(&m, &t.entry)?, t.denoise, &variants)?;
                for (acc, f) in per_variant.iter_mut().zip(fs) {
                    acc.push(FeatureRecord {
                        id: t.entry.id.clone(),
                        device: t.entry.device.clone(),
                        speaker: t.entry.speaker.clone(),
                        fingerprint: f.with_source(t.entry.id.clone()),
                    });
                }
            }
            for (v, recs) in variants.iter().zip(&per_variant) {
                let path = out.join(format!("features_{v}_{}.bin", regime.as_str()));
                save_features(&path, *v, &cfg.hash(), None, recs)?;
                println!("{}: {} records", path.display(), recs.len());
            }
        }
        Command::TrainSvm { features, regime, denoiser, speech } => {
            let (_, recs) = load_features(features)?;
            let raw: Vec<_> = recs.iter().map(|r| r.fingerprint.clone()).collect();
            let stats = FeatureStats::fit(&raw)?;
            let normed = raw.iter().map(|f| normalize(f, &stats)).collect::<Result<Vec<_>>>()?;
            let labels: Vec<String> = recs.iter().map(|r| r.device.clone()).collect();
            let svm = train_svm(&normed, &labels, &stats, &cfg.svm)?;
            let speakers = recs.iter().map(|r| r.speaker.clone()).collect();
            let pipeline = TrainedPipeline::new(
                cfg.stft,
                opt_load(denoiser, DenoiserModel::load)?,
                opt_load(speech, SpeechModel::load)?,
                svm,
                *regime,
                speakers,
            )?;
            pipeline.save(out)?;
            println!("{} classes, {} support vectors", pipeline.svm.classes(), pipeline.svm.support_vectors());
        }
        Command::Evaluate { pipeline, manifest, snr, denoise } => {
            let p = TrainedPipeline::load(pipeline)?;
            let m = Manifest::load(manifest)?;
            let report = evaluate(&p, &m, &parse_snr(snr, cfg.seed)?, denoise.unwrap_or(p.default_denoise()))?;
            println!("{} {} denoise={} {}: {:.2}%", report.variant, report.regime, report.denoise, report.test, report.accuracy_percent);
            let name = format!("eval_{}.json", micid::eval::confusion_stem(&report));
            std::fs::write(out.join(name), serde_json::to_vec_pretty(&report)?)?;
        }
        Command::Report { reports } => {
            let rs = reports
                .iter()
                .map(|p| {
                    let bytes = std::fs::read(p).map_err(|_| Error::MissingFile(p.clone()))?;
                    serde_json::from_slice::<EvalReport>(&bytes).map_err(|e| Error::format(p, e.to_string()))
                })
                .collect::<Result<Vec<_>>>()?;
            for p in emit_report(&rs, out)? {
                println!("{}", p.display());
            }
        }
        Command::RunExperiment => {
            let res = run_experiment(&cfg, out)?;
            for r in &res.reports {
                println!(
                    "{:<3} {:<9} denoise={:<5} {:<9} {:6.2}%",
                    r.variant.as_str(), r.regime, r.denoise, r.test, r.accuracy_percent
                );
            }
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    if let Some(j) = cli.jobs {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(j.max(1)).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
