use std::collections::BTreeSet;
use std::ffi::{CStr, CString};
use std::ptr;

use micid::classifier::{train_svm, SvmConfig};
use micid::corpus::{simulate_device, synthesize, Regime, SpeakerProfile, VirtualDevice};
use micid::denoiser::{DenoiserArch, DenoiserModel};
use micid::dsp::{StftConfig, Waveform};
use micid::fingerprint::{normalize, FeatureStats, Variant};
use micid::pipeline::{Extractor, TrainedPipeline};
use micid_ffi::*;

fn last_error() -> String {
    let p = micid_last_error();
    assert!(!p.is_null());
    unsafe { CStr::from_ptr(p) }.to_string_lossy().into_owned()
}

fn tone(n: usize) -> Vec<f64> {
    (0..n).map(|i| (i as f64 * 0.05).sin() + 0.3 * (i as f64 * 0.71).cos()).collect()
}

fn recording(dev: &VirtualDevice, spk: usize, utt: u64) -> Waveform {
    let s = SpeakerProfile::random(format!("spk{spk}"), 3);
    simulate_device(&synthesize(&s, 16_448, utt), dev, utt + 100).unwrap()
}

/// Two-device f3 pipeline on a 64-point STFT.
fn tiny_pipeline(dir: &std::path::Path) -> Vec<Waveform> {
    let stft = StftConfig::new(64).unwrap();
    let devices = [VirtualDevice::random("a", 1), VirtualDevice::random("b", 2)];
    let ex = Extractor { stft, denoiser: None, speech: None };
    let (mut feats, mut labels, mut held) = (Vec::new(), Vec::new(), Vec::new());
    for (d, dev) in devices.iter().enumerate() {
        for u in 0..6 {
            let w = recording(dev, u % 3, (d * 10 + u) as u64);
            feats.push(ex.fingerprints(&w, false, &[Variant::F3]).unwrap().remove(0));
            labels.push(dev.label.clone());
        }
        held.push(recording(dev, 4, 77 + d as u64));
    }
    let stats = FeatureStats::fit(&feats).unwrap();
    let normed: Vec<_> = feats.iter().map(|f| normalize(f, &stats).unwrap()).collect();
    let svm = train_svm(&normed, &labels, &stats, &SvmConfig::default()).unwrap();
    let speakers: BTreeSet<String> = (0..3).map(|s| format!("spk{s}")).collect();
    TrainedPipeline::new(stft, None, None, svm, Regime::Clean, speakers)
        .unwrap()
        .save(dir)
        .unwrap();
    held
}

#[test]
fn version_is_crate_version() {
    let v = unsafe { CStr::from_ptr(micid_version()) };
    assert_eq!(v.to_str().unwrap(), env!("CARGO_PKG_VERSION"));
}

#[test]
fn spectrogram_roundtrip_matches_core() {
    let x = tone(4096);
    let mut s = ptr::null_mut();
    let st = unsafe { micid_spectrogram_compute(x.as_ptr(), x.len(), 16_000, 128, &mut s) };
    assert_eq!(st, MicidStatus::Ok);
    let (bins, frames) = unsafe { (micid_spectrogram_bins(s), micid_spectrogram_frames(s)) };
    let expected = micid::dsp::stft_logpower(
        &Waveform::new(x.clone(), 16_000),
        &StftConfig::new(128).unwrap(),
    )
    .unwrap();
    assert_eq!((bins, frames), (expected.bins(), expected.frames()));

    let mut buf = vec![0.0; bins * frames];
    assert_eq!(unsafe { micid_spectrogram_copy(s, buf.as_mut_ptr(), buf.len()) }, MicidStatus::Ok);
    assert_eq!(buf, expected.values.as_slice());

    let mut short = vec![0.0; 3];
    let st = unsafe { micid_spectrogram_copy(s, short.as_mut_ptr(), short.len()) };
    assert_eq!(st, MicidStatus::InvalidArgument);
    assert!(last_error().contains("need"));
    unsafe { micid_spectrogram_free(s) };
}

#[test]
fn bad_inputs_map_to_status_codes() {
    let x = tone(100);
    let mut s = ptr::null_mut();
    let st = unsafe { micid_spectrogram_compute(ptr::null(), 10, 16_000, 128, &mut s) };
    assert_eq!(st, MicidStatus::NullPointer);
    assert!(s.is_null());

    let st = unsafe { micid_spectrogram_compute(x.as_ptr(), x.len(), 16_000, 128, &mut s) };
    assert_eq!(st, MicidStatus::DataError);
    assert!(last_error().contains("too short"));

    let st = unsafe { micid_spectrogram_compute(x.as_ptr(), x.len(), 16_000, 63, &mut s) };
    assert_eq!(st, MicidStatus::ConfigError);

    let mut p = ptr::null_mut();
    let missing = CString::new("/nonexistent/pipeline").unwrap();
    assert_eq!(unsafe { micid_pipeline_load(missing.as_ptr(), &mut p) }, MicidStatus::IoError);
    assert!(p.is_null());

    unsafe {
        micid_pipeline_free(ptr::null_mut());
        micid_denoiser_free(ptr::null_mut());
        micid_spectrogram_free(ptr::null_mut());
        assert_eq!(micid_pipeline_class_count(ptr::null()), 0);
        assert!(micid_pipeline_class_label(ptr::null(), 0).is_null());
    }
}

#[test]
fn successful_call_clears_error() {
    let mut s = ptr::null_mut();
    unsafe { micid_spectrogram_compute(ptr::null(), 0, 16_000, 128, &mut s) };
    assert!(!micid_last_error().is_null());
    let x = tone(2048);
    unsafe {
        assert_eq!(micid_spectrogram_compute(x.as_ptr(), x.len(), 16_000, 64, &mut s), MicidStatus::Ok);
        micid_spectrogram_free(s);
    }
    assert!(micid_last_error().is_null());
}

#[test]
fn denoiser_load_and_apply() {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("d.mcf");
    let arch = DenoiserArch { depth: 2, channels: 2, patch_side: 32 };
    let model = DenoiserModel::<f32>::init(arch, 4);
    model.save(&path).unwrap();

    let x = tone(16_000);
    let cpath = CString::new(path.to_str().unwrap()).unwrap();
    unsafe {
        let mut d = ptr::null_mut();
        assert_eq!(micid_denoiser_load(cpath.as_ptr(), &mut d), MicidStatus::Ok);
        let mut s = ptr::null_mut();
        assert_eq!(micid_spectrogram_compute(x.as_ptr(), x.len(), 16_000, 64, &mut s), MicidStatus::Ok);
        let mut out = ptr::null_mut();
        assert_eq!(micid_denoiser_apply(d, s, &mut out), MicidStatus::Ok);
        assert_eq!(micid_spectrogram_bins(out), 32);
        assert_eq!(micid_spectrogram_frames(out), micid_spectrogram_frames(s));

        let spec = micid::dsp::stft_logpower(&Waveform::new(x, 16_000), &StftConfig::new(64).unwrap()).unwrap();
        let want = model.denoise_spectrogram(&spec).unwrap();
        let mut buf = vec![0.0; want.values.as_slice().len()];
        micid_spectrogram_copy(out, buf.as_mut_ptr(), buf.len());
        assert_eq!(buf, want.values.as_slice());

        let mut wrong = ptr::null_mut();
        let y = tone(16_000);
        micid_spectrogram_compute(y.as_ptr(), y.len(), 16_000, 128, &mut wrong);
        let mut out2 = ptr::null_mut();
        assert_eq!(micid_denoiser_apply(d, wrong, &mut out2), MicidStatus::DataError);
        assert!(out2.is_null());

        micid_spectrogram_free(wrong);
        micid_spectrogram_free(out);
        micid_spectrogram_free(s);
        micid_denoiser_free(d);
    }
}

#[test]
fn pipeline_classify_matches_core() {
    let dir = tempfile::tempdir().unwrap();
    let held = tiny_pipeline(dir.path());
    let core = TrainedPipeline::load(dir.path()).unwrap();
    let cdir = CString::new(dir.path().to_str().unwrap()).unwrap();
    unsafe {
        let mut p = ptr::null_mut();
        assert_eq!(micid_pipeline_load(cdir.as_ptr(), &mut p), MicidStatus::Ok);
        assert_eq!(micid_pipeline_class_count(p), 2);
        let l0 = CStr::from_ptr(micid_pipeline_class_label(p, 0)).to_str().unwrap().to_owned();
        assert_eq!(l0, "a");
        assert!(micid_pipeline_class_label(p, 2).is_null());

        for w in &held {
            let mut idx = usize::MAX;
            let mut scores = [0.0; 2];
            let st = micid_pipeline_classify(
                p, w.samples.as_ptr(), w.len(), 16_000, -1, &mut idx, scores.as_mut_ptr(), 2,
            );
            assert_eq!(st, MicidStatus::Ok);
            let want = core.classify(w, false).unwrap();
            assert_eq!(idx, want.class_index);
            assert_eq!(scores.to_vec(), want.scores);
        }

        let w = &held[0];
        let mut idx = 0;
        let st = micid_pipeline_classify(p, w.samples.as_ptr(), w.len(), 16_000, 1, &mut idx, ptr::null_mut(), 0);
        assert_eq!(st, MicidStatus::ConfigError);
        let st = micid_pipeline_classify(p, w.samples.as_ptr(), w.len(), 16_000, 7, &mut idx, ptr::null_mut(), 0);
        assert_eq!(st, MicidStatus::InvalidArgument);
        let mut one = [0.0; 1];
        let st = micid_pipeline_classify(p, w.samples.as_ptr(), w.len(), 16_000, 0, &mut idx, one.as_mut_ptr(), 1);
        assert_eq!(st, MicidStatus::InvalidArgument);
        let st = micid_pipeline_classify(p, w.samples.as_ptr(), w.len(), 8_000, 0, &mut idx, ptr::null_mut(), 0);
        assert_eq!(st, MicidStatus::DataError);
        micid_pipeline_free(p);
    }
}

#[test]
fn header_declares_every_entry_point() {
    let header = std::fs::read_to_string(concat!(env!("CARGO_MANIFEST_DIR"), "/include/micid.h")).unwrap();
    for name in [
        "micid_pipeline_load",
        "micid_pipeline_classify",
        "micid_spectrogram_copy",
        "micid_denoiser_apply",
        "micid_last_error",
        "MICID_STATUS_DIVERGED",
    ] {
        assert!(header.contains(name), "{name} missing from header");
    }
}
