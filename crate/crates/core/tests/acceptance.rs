//! Acceptance suite. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fail. Pass criterion ids (e.g. `AC-3 AC-6`) to run a subset.

mod common;

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use micid::classifier::{smo, train_svm, SvmConfig};
use micid::config::ExperimentConfig;
use micid::corpus::{
    build_synthetic_corpus, cross_speaker_split, load_recording, power_response_db,
    simulate_device, synthesize, Regime, SpeakerProfile, VirtualDevice,
};
use micid::denoiser::{gradients, train_denoiser, DenoiserModel, PatchPair, TrainConfig};
use micid::dsp::{mfcc, split_patches, stft_logpower, Matrix, MfccConfig, MfccSequence, Origin, StftConfig, Waveform};
use micid::eval::{run_experiment, ExperimentOutput, TEST_NOISE_NAMESPACE};
use micid::fingerprint::{extract_f1, extract_f2, extract_f3, normalize, FeatureStats, Fingerprint, Variant};
use micid::noise::{entry_seed, inject_awgn, measure_snr, SnrSpec};
use micid::speech::{train_gmm, train_speech_model, GmmConfig};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<String, String>;

fn desk_config() -> ExperimentConfig {
    ExperimentConfig::load(Path::new(concat!(env!("CARGO_MANIFEST_DIR"), "/../../configs/desk.toml")))
        .expect("configs/desk.toml")
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn max_dev(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

fn ac1() -> Outcome {
    let (mut d_stft, mut d_mfcc, mut d_f): (f64, f64, f64) = (0.0, 0.0, 0.0);
    for seed in 0..100u64 {
        let n = [64, 128, 256][seed as usize % 3];
        let x = common::random_signal(seed, 4 * n + seed as usize % n);
        let got = stft_logpower(&Waveform::new(x.clone(), 16_000), &StftConfig::new(n).unwrap()).unwrap();
        for (k, row) in common::naive_stft_db(&x, n).iter().enumerate() {
            d_stft = d_stft.max(max_dev(got.values.row(k), row));
        }
        let c = mfcc(&got, &MfccConfig::default()).unwrap();
        for (t, row) in common::naive_mfcc(&got, 27, 13).iter().enumerate() {
            d_mfcc = d_mfcc.max(max_dev(c.coeffs.row(t), row));
        }
        let bins = 16 + 8 * (seed as usize % 4);
        let frames = 2 + seed as usize % 30;
        let den = common::random_spectrogram(seed + 7, bins, frames, Origin::Denoised);
        let res = common::random_spectrogram(seed + 9, bins, frames, Origin::Residual);
        d_f = d_f
            .max(max_dev(&extract_f1(&res).unwrap().values, &common::naive_f1(&res)))
            .max(max_dev(&extract_f2(&den, &res).unwrap().values, &common::naive_f2(&den, &res)))
            .max(max_dev(&extract_f3(&den).unwrap().values, &common::naive_f3(&den)));
    }
    check(
        d_stft <= 1e-6 && d_mfcc <= 1e-9 && d_f <= 1e-9,
        format!("max dev: stft {d_stft:.2e} dB, mfcc {d_mfcc:.2e}, f1/f2/f3 {d_f:.2e}"),
    )
}

fn ac2() -> Outcome {
    let cfg = desk_config();
    let tmp = tempfile::tempdir().unwrap();
    let corpus = build_synthetic_corpus(&cfg.corpus.synthetic, cfg.seed, tmp.path()).map_err(|e| e.to_string())?;
    let (train, test, _) = cross_speaker_split(&corpus.manifest, cfg.corpus.train_speakers, cfg.seed).unwrap();
    let levels = [20.0, 25.0, 30.0, 35.0];
    let pairs_of = |m: &micid::corpus::Manifest, ns: &str| -> Vec<PatchPair> {
        let mut out = Vec::new();
        for e in &m.entries {
            let w = load_recording(m, e).unwrap();
            let (clean, _) = split_patches(&stft_logpower(&w, &cfg.stft).unwrap()).unwrap();
            for db in levels {
                let s = SnrSpec::finite(db, entry_seed(cfg.seed, ns, &e.id, db)).unwrap();
                let (noisy, _) = split_patches(&stft_logpower(&inject_awgn(&w, &s).unwrap(), &cfg.stft).unwrap()).unwrap();
                for (n, c) in noisy.patches.into_iter().zip(&clean.patches) {
                    out.push(PatchPair { noisy: n, clean: c.clone(), snr_db: db, group: e.id.clone() });
                }
            }
        }
        out
    };
    let mut pairs = pairs_of(&train, "denoiser");
    pairs.shuffle(&mut ChaCha8Rng::seed_from_u64(cfg.seed));
    pairs.truncate(800);
    let held = pairs_of(&test, TEST_NOISE_NAMESPACE);
    let tc = TrainConfig { epochs: 40, batch_size: 32, seed: cfg.seed, ..cfg.denoiser.train };
    let trained = train_denoiser(&pairs, &tc).map_err(|e| e.to_string())?;
    let first = trained.log.first().unwrap().validation_loss;
    let last = trained.log.last().unwrap().validation_loss;
    let ratio = last / first;
    let mut ok = pairs.len() >= 500 && ratio < 0.5;
    let mut detail = format!("{} pairs, val MSE {first:.4} -> {last:.4} (x{ratio:.3});", pairs.len());
    for db in levels {
        let (mut noisy, mut den, mut k) = (0.0, 0.0, 0.0);
        for p in held.iter().filter(|p| p.snr_db == db) {
            noisy += p.noisy.mse(&p.clean);
            den += trained.model.denoise_patch(&p.noisy, cfg.stft.floor_db).unwrap().mse(&p.clean);
            k += 1.0;
        }
        let (noisy, den) = (noisy / k, den / k);
        let gain = 1.0 - den / noisy;
        ok &= den < noisy && (db != 20.0 || gain >= 0.2);
        detail += &format!(" {db}dB {noisy:.1}->{den:.1}");
    }
    check(ok, detail)
}

fn ac3() -> Outcome {
    let arch = micid::denoiser::DenoiserArch { depth: 2, channels: 2, patch_side: 8 };
    let mut r = common::rng(31);
    let batch: Vec<PatchPair> = (0..3)
        .map(|i| {
            let clean = Matrix::from_fn(8, 8, |_, _| r.random_range(-100.0..-20.0));
            let noisy = Matrix::from_fn(8, 8, |a, b| clean.get(a, b) + r.random_range(0.0..12.0));
            PatchPair { noisy, clean, snr_db: 20.0, group: format!("{i}") }
        })
        .collect();
    let loss_of = |m: &DenoiserModel<f64>| -> f64 {
        let mut s = 0.0;
        for p in &batch {
            let out = m.forward(&p.noisy).unwrap();
            for i in 0..64 {
                s += ((out.as_slice()[i] - (p.noisy.as_slice()[i] - p.clean.as_slice()[i])) / m.scale_db).powi(2);
            }
        }
        s / (64 * batch.len()) as f64
    };
    let mut worst: f64 = 0.0;
    for seed in 0..4 {
        let mut m = DenoiserModel::<f64>::init(arch, seed);
        let (_, g) = gradients(&m, &batch).unwrap();
        let g = g.flatten();
        let base = m.params();
        for i in 0..base.len() {
            let h = 1e-6;
            let mut p = base.clone();
            p[i] = base[i] + h;
            m.set_params(&p);
            let up = loss_of(&m);
            p[i] = base[i] - h;
            m.set_params(&p);
            let down = loss_of(&m);
            let num = (up - down) / (2.0 * h);
            worst = worst.max((g[i] - num).abs() / g[i].abs().max(num.abs()).max(1e-6));
        }
        m.set_params(&base);
    }
    check(worst < 1e-4, format!("max relative gradient error {worst:.2e}"))
}

fn ac6() -> Outcome {
    let mut r = common::rng(6);
    let mut worst: f64 = 0.0;
    for i in 0..1000u64 {
        let len = r.random_range(256..20_000);
        let w = Waveform::new(common::random_signal(i, len), 16_000);
        let target = r.random_range(0.0..=60.0);
        let noisy = inject_awgn(&w, &SnrSpec::finite(target, r.random()).unwrap()).unwrap();
        worst = worst.max((measure_snr(&w, &noisy).unwrap() - target).abs());
    }
    check(worst <= 0.1, format!("max |measured - target| {worst:.2e} dB over 1000 draws"))
}

fn blobs(seed: u64, k: usize, per: usize, spread: f64) -> (Vec<Vec<f64>>, Vec<usize>) {
    let mut r = common::rng(seed);
    let mut x = Vec::new();
    let mut y = Vec::new();
    for c in 0..k {
        let centre: Vec<f64> = (0..4).map(|_| r.random_range(-4.0..4.0)).collect();
        for _ in 0..per {
            x.push(centre.iter().map(|m| { let e: f64 = StandardNormal.sample(&mut r); m + spread * e }).collect());
            y.push(c);
        }
    }
    (x, y)
}

fn ac7() -> Outcome {
    let mut ll_drop: f64 = 0.0;
    for seed in 0..20u64 {
        let mut r = common::rng(seed);
        let centres: Vec<Vec<f64>> = (0..3).map(|_| (0..5).map(|_| r.random_range(-4.0..4.0)).collect()).collect();
        let coeffs = Matrix::from_fn(600, 5, |t, d| {
            let e: f64 = StandardNormal.sample(&mut r);
            centres[t % 3][d] + e
        });
        let seq = MfccSequence { coeffs, config: MfccConfig::default() };
        let m = train_gmm(&[seq], &GmmConfig { components: 5, seed, ..Default::default() }).map_err(|e| e.to_string())?;
        for w in m.log_likelihood.windows(2) {
            ll_drop = ll_drop.max(w[0] - w[1]);
        }
    }
    let mut kkt: f64 = 0.0;
    for (seed, spread, c) in [(1, 0.3, 1.0), (2, 0.3, 100.0), (3, 2.0, 1.0), (4, 3.0, 0.3)] {
        let (x, lab) = blobs(seed, 2, 40, spread);
        let y: Vec<f64> = lab.iter().map(|&l| if l == 0 { 1.0 } else { -1.0 }).collect();
        let k = Matrix::from_fn(x.len(), x.len(), |i, j| micid::classifier::rbf(&x[i], &x[j], 0.25));
        let s = smo(&k, &y, c, 1e-3, 1_000_000);
        kkt = kkt.max(common::kkt_violation(&k, &y, &s.alpha, s.rho, c));
    }
    let (x, lab) = blobs(9, 4, 20, 0.2);
    let raw: Vec<Fingerprint> = x.iter().map(|v| Fingerprint::new(v.clone(), Variant::F3)).collect();
    let stats = FeatureStats::fit(&raw).unwrap();
    let norm: Vec<Fingerprint> = raw.iter().map(|f| normalize(f, &stats).unwrap()).collect();
    let labels: Vec<String> = lab.iter().map(|l| format!("dev{l}")).collect();
    let svm = train_svm(&norm, &labels, &stats, &SvmConfig::default()).map_err(|e| e.to_string())?;
    let correct = norm.iter().zip(&labels).filter(|(f, l)| svm.predict(f).unwrap().label == **l).count();
    let acc = 100.0 * correct as f64 / norm.len() as f64;
    check(
        ll_drop <= 1e-9 && kkt <= 1e-3 && acc == 100.0,
        format!("max LL decrease {ll_drop:.1e}, max KKT violation {kkt:.1e}, blob accuracy {acc:.1}%"),
    )
}

/// Mean accuracy over seeds for each (variant, regime, denoise, test) cell.
fn seed_means(out: &ExperimentOutput) -> BTreeMap<(Variant, Regime, bool, String), f64> {
    let mut sums: BTreeMap<(Variant, Regime, bool, String), (f64, usize)> = BTreeMap::new();
    for run in &out.runs {
        for r in &run.reports {
            let e = sums.entry((r.variant, r.regime, r.denoise, r.test.clone())).or_default();
            e.0 += r.accuracy_percent;
            e.1 += 1;
        }
    }
    sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect()
}

fn ac4(out: &ExperimentOutput) -> Outcome {
    let means = seed_means(out);
    let mut ok = out.runs.len() == 3;
    let mut detail = String::new();
    for v in Variant::ALL {
        for t in ["20dB", "25dB", "30dB"] {
            let on = means[&(v, Regime::Clean, true, t.to_string())];
            let off = means[&(v, Regime::Clean, false, t.to_string())];
            ok &= on - off >= 5.0;
            detail += &format!(" {v}@{t} {off:.1}->{on:.1}");
        }
    }
    check(ok, format!("{} seeds;{detail}", out.runs.len()))
}

fn ac5(out: &ExperimentOutput) -> Outcome {
    let means = seed_means(out);
    let mut ok = true;
    let mut detail = String::new();
    for v in Variant::ALL {
        let t = "20dB".to_string();
        let den = means[&(v, Regime::Denoised, true, t.clone())];
        let mix = means[&(v, Regime::Mixed, false, t.clone())];
        let clean = means[&(v, Regime::Clean, false, t)];
        ok &= den >= mix && mix >= clean && den - clean >= 10.0;
        detail += &format!(" {v}: denoised {den:.1} mixed {mix:.1} clean {clean:.1};");
    }
    check(ok, detail.trim_end_matches(';').trim().to_string())
}

fn report_files(root: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![root.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else if p.components().any(|c| c.as_os_str() == "report") {
                out.insert(p.strip_prefix(root).unwrap().to_path_buf(), fs::read(&p).unwrap());
            }
        }
    }
    out
}

fn ac8(first: &Path, cfg: &ExperimentConfig) -> Outcome {
    let tmp = tempfile::tempdir().unwrap();
    run_experiment(cfg, tmp.path()).map_err(|e| e.to_string())?;
    let a = report_files(first);
    let b = report_files(tmp.path());
    let differing: Vec<_> = a.iter().filter(|(k, v)| b.get(*k) != Some(*v)).map(|(k, _)| k.display().to_string()).collect();
    check(
        !a.is_empty() && a.len() == b.len() && differing.is_empty(),
        format!("{} report files compared, {} differ {:?}", a.len(), differing.len(), differing.iter().take(3).collect::<Vec<_>>()),
    )
}

fn ac9() -> Outcome {
    let cfg = desk_config();
    let spectra = (0..4)
        .map(|i| {
            let s = SpeakerProfile::random(format!("talker{i}"), 77);
            stft_logpower(&synthesize(&s, 150 * 16_000, 500 + i as u64), &cfg.stft)
        })
        .collect::<micid::Result<Vec<_>>>()
        .map_err(|e| e.to_string())?;
    let gc = GmmConfig { seed: 3, ..cfg.gmm };
    let model = train_speech_model(&spectra, &cfg.mfcc, &gc).map_err(|e| e.to_string())?;
    let mut rs = Vec::new();
    for i in 0..10 {
        let dev = VirtualDevice::random(format!("chan{i}"), 900);
        let talker = SpeakerProfile::random(format!("probe{i}"), 78);
        let w = simulate_device(&synthesize(&talker, 8 * 16_000, 40 + i as u64), &dev, 7).unwrap();
        let spec = stft_logpower(&w, &cfg.stft).unwrap();
        let f1 = extract_f1(&model.residual(&spec).unwrap()).unwrap().values;
        let h: Vec<f64> = (0..spec.bins())
            .map(|m| power_response_db(&dev.fir_taps, m as f64 * spec.bin_hz, 16_000.0))
            .collect();
        rs.push(common::pearson(&f1, &h));
    }
    let hits = rs.iter().filter(|&&r| r > 0.8).count();
    let shown: Vec<String> = rs.iter().map(|r| format!("{r:.2}")).collect();
    check(hits >= 8, format!("{hits}/10 devices with r > 0.8 [{}]", shown.join(" ")))
}

fn main() -> ExitCode {
    let wanted: Vec<String> = std::env::args().skip(1).filter(|a| a.starts_with("AC-")).collect();
    let run = |id: &str| wanted.is_empty() || wanted.iter().any(|w| w == id);
    let mut failed = 0;
    let mut report = |id: &str, t: Instant, o: Outcome| {
        let secs = t.elapsed().as_secs_f64();
        match o {
            Ok(d) => println!("{id} PASS ({secs:.1}s) {d}"),
            Err(d) => {
                failed += 1;
                println!("{id} FAIL ({secs:.1}s) {d}")
            }
        }
    };
    let quick: [(&str, fn() -> Outcome); 5] = [("AC-1", ac1), ("AC-3", ac3), ("AC-6", ac6), ("AC-7", ac7), ("AC-9", ac9)];
    for (id, f) in quick {
        if run(id) {
            let t = Instant::now();
            report(id, t, f());
        }
    }
    if run("AC-2") {
        let t = Instant::now();
        report("AC-2", t, ac2());
    }
    if run("AC-4") || run("AC-5") || run("AC-8") {
        let cfg = desk_config();
        let tmp = tempfile::tempdir().unwrap();
        let t = Instant::now();
        match run_experiment(&cfg, tmp.path()) {
            Ok(out) => {
                if run("AC-4") {
                    report("AC-4", t, ac4(&out));
                }
                if run("AC-5") {
                    report("AC-5", t, ac5(&out));
                }
                if run("AC-8") {
                    let t = Instant::now();
                    report("AC-8", t, ac8(tmp.path(), &cfg));
                }
            }
            Err(e) => {
                for id in ["AC-4", "AC-5", "AC-8"] {
                    if run(id) {
                        report(id, t, Err(format!("experiment failed: {e}")));
                    }
                }
            }
        }
    }
    if failed > 0 {
        println!("{failed} acceptance criteria failed");
        ExitCode::FAILURE
    } else {
        ExitCode::SUCCESS
    }
}
