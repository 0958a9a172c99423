//! C interface to the micid toolkit.
//!
//! Every function returns a [`MicidStatus`] (or a plain value for the simple
//! getters). On failure the message is kept per thread and can be read with
//! [`micid_last_error`]. Objects are opaque and must be released with their
//! matching `_free` function.

use std::cell::RefCell;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::PathBuf;
use std::ptr;

use micid::denoiser::DenoiserModel;
use micid::dsp::{stft_logpower, Spectrogram, StftConfig, Waveform};
use micid::pipeline::TrainedPipeline;
use micid::Error;

#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum MicidStatus {
    Ok = 0,
    NullPointer = 1,
    InvalidArgument = 2,
    ConfigError = 3,
    DataError = 4,
    IoError = 5,
    Diverged = 6,
    Panic = 7,
}

pub struct MicidPipeline {
    inner: TrainedPipeline,
    labels: Vec<CString>,
}

pub struct MicidDenoiser {
    inner: DenoiserModel,
}

pub struct MicidSpectrogram {
    inner: Spectrogram,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<CString>> = const { RefCell::new(None) };
}

fn set_error(msg: impl Into<String>) {
    let msg = msg.into().replace('\0', " ");
    LAST_ERROR.with(|e| *e.borrow_mut() = CString::new(msg).ok());
}

fn clear_error() {
    LAST_ERROR.with(|e| *e.borrow_mut() = None);
}

fn status_of(err: &Error) -> MicidStatus {
    match err {
        Error::Stage { source, .. } => status_of(source),
        Error::Io(_) | Error::MissingFile(_) => MicidStatus::IoError,
        Error::DivergedLoss { .. } | Error::DegenerateComponent(_) => MicidStatus::Diverged,
        e if e.exit_code() == 2 => MicidStatus::ConfigError,
        _ => MicidStatus::DataError,
    }
}

fn guard(f: impl FnOnce() -> Result<(), MicidStatus>) -> MicidStatus {
    clear_error();
    match catch_unwind(AssertUnwindSafe(f)) {
        Ok(Ok(())) => MicidStatus::Ok,
        Ok(Err(s)) => s,
        Err(_) => {
            set_error("internal panic");
            MicidStatus::Panic
        }
    }
}

fn fail(err: Error) -> MicidStatus {
    let s = status_of(&err);
    set_error(err.to_string());
    s
}

fn null(what: &str) -> MicidStatus {
    set_error(format!("{what} is null"));
    MicidStatus::NullPointer
}

fn invalid(msg: impl Into<String>) -> MicidStatus {
    set_error(msg);
    MicidStatus::InvalidArgument
}

unsafe fn path_arg(p: *const c_char) -> Result<PathBuf, MicidStatus> {
    if p.is_null() {
        return Err(null("path"));
    }
    let s = CStr::from_ptr(p)
        .to_str()
        .map_err(|_| invalid("path is not valid UTF-8"))?;
    Ok(PathBuf::from(s))
}

unsafe fn wave_arg(samples: *const f64, len: usize, sample_rate: u32) -> Result<Waveform, MicidStatus> {
    if samples.is_null() {
        return Err(null("samples"));
    }
    let s = std::slice::from_raw_parts(samples, len);
    Ok(Waveform::new(s.to_vec(), sample_rate))
}

/// Message for the most recent failure on this thread, or NULL. The pointer
/// stays valid until the next call into the library from the same thread.
#[no_mangle]
pub extern "C" fn micid_last_error() -> *const c_char {
    LAST_ERROR.with(|e| e.borrow().as_ref().map_or(ptr::null(), |s| s.as_ptr()))
}

/// Library version as a static NUL-terminated string.
#[no_mangle]
pub extern "C" fn micid_version() -> *const c_char {
    concat!(env!("CARGO_PKG_VERSION"), "\0").as_ptr().cast()
}

/// Loads a pipeline directory written by `micid train-svm`.
///
/// # Safety
/// `dir` must be a NUL-terminated string and `out` a writable pointer.
#[no_mangle]
pub unsafe extern "C" fn micid_pipeline_load(
    dir: *const c_char,
    out: *mut *mut MicidPipeline,
) -> MicidStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let dir = path_arg(dir)?;
        let inner = TrainedPipeline::load(&dir).map_err(fail)?;
        let labels = inner
            .svm
            .classes
            .iter()
            .map(|c| CString::new(c.replace('\0', " ")).unwrap_or_default())
            .collect();
        *out = Box::into_raw(Box::new(MicidPipeline { inner, labels }));
        Ok(())
    })
}

/// # Safety
/// `p` must come from [`micid_pipeline_load`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn micid_pipeline_free(p: *mut MicidPipeline) {
    if !p.is_null() {
        drop(Box::from_raw(p));
    }
}

/// Number of device classes, 0 for NULL.
///
/// # Safety
/// `p` must be a live pipeline or NULL.
#[no_mangle]
pub unsafe extern "C" fn micid_pipeline_class_count(p: *const MicidPipeline) -> usize {
    p.as_ref().map_or(0, |p| p.labels.len())
}

/// Label of class `index`, or NULL when out of range. Owned by the pipeline.
///
/// # Safety
/// `p` must be a live pipeline or NULL.
#[no_mangle]
pub unsafe extern "C" fn micid_pipeline_class_label(
    p: *const MicidPipeline,
    index: usize,
) -> *const c_char {
    match p.as_ref().and_then(|p| p.labels.get(index)) {
        Some(s) => s.as_ptr(),
        None => ptr::null(),
    }
}

/// Identifies the device of a mono recording.
///
/// `denoise` is 1 or 0 to force denoising on or off, or -1 for the
/// pipeline's default. `scores` may be NULL; otherwise it must hold
/// `scores_len` doubles, at least the class count.
///
/// # Safety
/// `samples` must point to `len` doubles; `out_index` must be writable.
#[no_mangle]
pub unsafe extern "C" fn micid_pipeline_classify(
    p: *const MicidPipeline,
    samples: *const f64,
    len: usize,
    sample_rate: u32,
    denoise: i32,
    out_index: *mut usize,
    scores: *mut f64,
    scores_len: usize,
) -> MicidStatus {
    guard(|| {
        let p = p.as_ref().ok_or_else(|| null("pipeline"))?;
        if out_index.is_null() {
            return Err(null("out_index"));
        }
        let denoise = match denoise {
            -1 => p.inner.default_denoise(),
            0 => false,
            1 => true,
            d => return Err(invalid(format!("denoise must be -1, 0 or 1, got {d}"))),
        };
        if !scores.is_null() && scores_len < p.labels.len() {
            return Err(invalid(format!(
                "scores buffer holds {scores_len}, need {}",
                p.labels.len()
            )));
        }
        let wave = wave_arg(samples, len, sample_rate)?;
        let pred = p.inner.classify(&wave, denoise).map_err(fail)?;
        *out_index = pred.class_index;
        if !scores.is_null() {
            std::slice::from_raw_parts_mut(scores, pred.scores.len()).copy_from_slice(&pred.scores);
        }
        Ok(())
    })
}

/// Log-power spectrogram with analysis window `window_len`.
///
/// # Safety
/// `samples` must point to `len` doubles; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn micid_spectrogram_compute(
    samples: *const f64,
    len: usize,
    sample_rate: u32,
    window_len: usize,
    out: *mut *mut MicidSpectrogram,
) -> MicidStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let wave = wave_arg(samples, len, sample_rate)?;
        let cfg = StftConfig::new(window_len).map_err(fail)?;
        let inner = stft_logpower(&wave, &cfg).map_err(fail)?;
        *out = Box::into_raw(Box::new(MicidSpectrogram { inner }));
        Ok(())
    })
}

/// # Safety
/// `s` must be a live spectrogram or NULL.
#[no_mangle]
pub unsafe extern "C" fn micid_spectrogram_bins(s: *const MicidSpectrogram) -> usize {
    s.as_ref().map_or(0, |s| s.inner.bins())
}

/// # Safety
/// `s` must be a live spectrogram or NULL.
#[no_mangle]
pub unsafe extern "C" fn micid_spectrogram_frames(s: *const MicidSpectrogram) -> usize {
    s.as_ref().map_or(0, |s| s.inner.frames())
}

/// Copies the dB values, bin-major (`bins * frames` doubles).
///
/// # Safety
/// `dst` must hold `dst_len` doubles.
#[no_mangle]
pub unsafe extern "C" fn micid_spectrogram_copy(
    s: *const MicidSpectrogram,
    dst: *mut f64,
    dst_len: usize,
) -> MicidStatus {
    guard(|| {
        let s = s.as_ref().ok_or_else(|| null("spectrogram"))?;
        if dst.is_null() {
            return Err(null("dst"));
        }
        let src = s.inner.values.as_slice();
        if dst_len < src.len() {
            return Err(invalid(format!("buffer holds {dst_len}, need {}", src.len())));
        }
        std::slice::from_raw_parts_mut(dst, src.len()).copy_from_slice(src);
        Ok(())
    })
}

/// # Safety
/// `s` must come from [`micid_spectrogram_compute`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn micid_spectrogram_free(s: *mut MicidSpectrogram) {
    if !s.is_null() {
        drop(Box::from_raw(s));
    }
}

/// Loads a denoiser model file.
///
/// # Safety
/// `path` must be a NUL-terminated string and `out` writable.
#[no_mangle]
pub unsafe extern "C" fn micid_denoiser_load(
    path: *const c_char,
    out: *mut *mut MicidDenoiser,
) -> MicidStatus {
    guard(|| {
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let path = path_arg(path)?;
        let inner = DenoiserModel::load(&path).map_err(fail)?;
        *out = Box::into_raw(Box::new(MicidDenoiser { inner }));
        Ok(())
    })
}

/// Denoises a spectrogram, returning a new one in `out`.
///
/// # Safety
/// `d` and `s` must be live objects; `out` must be writable.
#[no_mangle]
pub unsafe extern "C" fn micid_denoiser_apply(
    d: *const MicidDenoiser,
    s: *const MicidSpectrogram,
    out: *mut *mut MicidSpectrogram,
) -> MicidStatus {
    guard(|| {
        let d = d.as_ref().ok_or_else(|| null("denoiser"))?;
        let s = s.as_ref().ok_or_else(|| null("spectrogram"))?;
        if out.is_null() {
            return Err(null("out"));
        }
        *out = ptr::null_mut();
        let inner = d.inner.denoise_spectrogram(&s.inner).map_err(fail)?;
        *out = Box::into_raw(Box::new(MicidSpectrogram { inner }));
        Ok(())
    })
}

/// # Safety
/// `d` must come from [`micid_denoiser_load`] or be NULL.
#[no_mangle]
pub unsafe extern "C" fn micid_denoiser_free(d: *mut MicidDenoiser) {
    if !d.is_null() {
        drop(Box::from_raw(d));
    }
}
