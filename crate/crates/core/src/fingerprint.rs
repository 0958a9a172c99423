//! Device fingerprints and their normalization.

use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::dsp::{Origin, Spectrogram};
use crate::error::{Error, Result};

pub const STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    F1,
    F2,
    F3,
}

impl Variant {
    pub const ALL: [Variant; 3] = [Variant::F1, Variant::F2, Variant::F3];

    /// Fingerprint length for a spectrogram with `bins` frequency bins.
    pub fn len_for(self, bins: usize) -> usize {
        match self {
            Variant::F1 => bins,
            Variant::F2 => 3 * bins,
            Variant::F3 => bins.saturating_sub(1),
        }
    }

    /// F1 and F2 need the speech model to build a residual.
    pub fn needs_residual(self) -> bool {
        !matches!(self, Variant::F3)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Variant::F1 => "f1",
            Variant::F2 => "f2",
            Variant::F3 => "f3",
        }
    }

    fn code(self) -> u8 {
        match self {
            Variant::F1 => 1,
            Variant::F2 => 2,
            Variant::F3 => 3,
        }
    }

    fn from_code(c: u8) -> Option<Self> {
        match c {
            1 => Some(Variant::F1),
            2 => Some(Variant::F2),
            3 => Some(Variant::F3),
            _ => None,
        }
    }
}

impl fmt::Display for Variant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "f1" => Ok(Variant::F1),
            "f2" => Ok(Variant::F2),
            "f3" => Ok(Variant::F3),
            other => Err(Error::BadConfig(format!("unknown fingerprint variant `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Fingerprint {
    pub values: Vec<f64>,
    pub variant: Variant,
    pub source_id: String,
}

impl Fingerprint {
    pub fn new(values: Vec<f64>, variant: Variant) -> Self {
        Fingerprint {
            values,
            variant,
            source_id: String::new(),
        }
    }

    pub fn with_source(mut self, id: impl Into<String>) -> Self {
        self.source_id = id.into();
        self
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

fn row_means(spec: &Spectrogram) -> Vec<f64> {
    let t = spec.frames() as f64;
    (0..spec.bins())
        .map(|m| spec.values.row(m).iter().sum::<f64>() / t)
        .collect()
}

fn require_origin(spec: &Spectrogram, expected: Origin) -> Result<()> {
    if spec.origin != expected {
        return Err(Error::WrongOrigin {
            expected: expected.as_str().into(),
            got: spec.origin.as_str().into(),
        });
    }
    Ok(())
}

/// Time average of the residual, per bin.
pub fn extract_f1(residual: &Spectrogram) -> Result<Fingerprint> {
    require_origin(residual, Origin::Residual)?;
    if residual.frames() == 0 {
        return Err(Error::TooFewFrames { got: 0, need: 1 });
    }
    Ok(Fingerprint::new(row_means(residual), Variant::F1))
}

/// Pearson correlation of two equal-length series; 0 when either is constant.
pub fn pearson(a: &[f64], b: &[f64]) -> f64 {
    let n = a.len() as f64;
    let ma = a.iter().sum::<f64>() / n;
    let mb = b.iter().sum::<f64>() / n;
    let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (dx, dy) = (x - ma, y - mb);
        sab += dx * dy;
        saa += dx * dx;
        sbb += dy * dy;
    }
    if saa <= 0.0 || sbb <= 0.0 {
        return 0.0;
    }
    (sab / (saa.sqrt() * sbb.sqrt())).clamp(-1.0, 1.0)
}

/// `[f1(residual) ; corr(residual_m, denoised_m) ; mean_t(denoised)]`.
pub fn extract_f2(denoised: &Spectrogram, residual: &Spectrogram) -> Result<Fingerprint> {
    denoised.same_shape(residual)?;
    if denoised.frames() < 2 {
        return Err(Error::TooFewFrames {
            got: denoised.frames(),
            need: 2,
        });
    }
    let mut values = extract_f1(residual)?.values;
    for m in 0..denoised.bins() {
        values.push(pearson(residual.values.row(m), denoised.values.row(m)));
    }
    values.extend(row_means(denoised));
    Ok(Fingerprint::new(values, Variant::F2))
}

/// Time average of the forward difference across frequency bins.
pub fn extract_f3(spec: &Spectrogram) -> Result<Fingerprint> {
    if spec.bins() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "band energy difference needs at least 2 bins, got {}",
            spec.bins()
        )));
    }
    if spec.frames() == 0 {
        return Err(Error::TooFewFrames { got: 0, need: 1 });
    }
    let means = row_means(spec);
    Ok(Fingerprint::new(
        means.windows(2).map(|w| w[1] - w[0]).collect(),
        Variant::F3,
    ))
}

/// Dispatch on variant. `residual` is required for F1 and F2.
pub fn extract(
    variant: Variant,
    denoised: &Spectrogram,
    residual: Option<&Spectrogram>,
) -> Result<Fingerprint> {
    let need = || Error::WrongOrigin {
        expected: Origin::Residual.as_str().into(),
        got: "none".into(),
    };
    match variant {
        Variant::F1 => extract_f1(residual.ok_or_else(need)?),
        Variant::F2 => extract_f2(denoised, residual.ok_or_else(need)?),
        Variant::F3 => extract_f3(denoised),
    }
}

/// Per-dimension training mean and standard deviation for one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureStats {
    pub variant: Variant,
    pub mean: Vec<f64>,
    pub std: Vec<f64>,
}

impl FeatureStats {
    pub fn fit(features: &[Fingerprint]) -> Result<Self> {
        let first = features.first().ok_or(Error::EmptyDataset)?;
        let (variant, l) = (first.variant, first.len());
        for f in features {
            if f.variant != variant || f.len() != l {
                return Err(Error::StatsMismatch(format!(
                    "mixed feature sets: {} of length {} vs {} of length {}",
                    variant,
                    l,
                    f.variant,
                    f.len()
                )));
            }
        }
        let n = features.len() as f64;
        let mut mean = vec![0.0; l];
        for f in features {
            for (m, v) in mean.iter_mut().zip(&f.values) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut var = vec![0.0; l];
        for f in features {
            for ((s, v), m) in var.iter_mut().zip(&f.values).zip(&mean) {
                *s += (v - m) * (v - m);
            }
        }
        let std = var.into_iter().map(|s| (s / n).sqrt().max(STD_FLOOR)).collect();
        Ok(FeatureStats { variant, mean, std })
    }

    pub fn len(&self) -> usize {
        self.mean.len()
    }

    pub fn is_empty(&self) -> bool {
        self.mean.is_empty()
    }

    /// Short content hash used to tie feature dumps and models together.
    pub fn hash(&self) -> String {
        let mut bytes = self.variant.as_str().as_bytes().to_vec();
        for v in self.mean.iter().chain(&self.std) {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
        crate::seed::short_hash(&bytes)
    }
}

/// Z-score with the training stats. Dimensions that were constant in training
/// map to 0.
pub fn normalize(f: &Fingerprint, stats: &FeatureStats) -> Result<Fingerprint> {
    if f.variant != stats.variant || f.len() != stats.len() {
        return Err(Error::StatsMismatch(format!(
            "feature {} of length {} against stats for {} of length {}",
            f.variant,
            f.len(),
            stats.variant,
            stats.len()
        )));
    }
    let values = f
        .values
        .iter()
        .zip(stats.mean.iter().zip(&stats.std))
        .map(|(v, (m, s))| if *s <= STD_FLOOR { 0.0 } else { (v - m) / s })
        .collect();
    Ok(Fingerprint {
        values,
        variant: f.variant,
        source_id: f.source_id.clone(),
    })
}

/// One row of a feature dump.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureRecord {
    pub id: String,
    pub device: String,
    pub speaker: String,
    pub fingerprint: Fingerprint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureDumpHeader {
    pub format: String,
    pub version: u32,
    pub variant: Variant,
    pub config_hash: String,
    pub stats_ref: Option<String>,
    pub records: usize,
}

const DUMP_MAGIC: &[u8; 8] = b"MICIDFT1";

fn put_str(out: &mut Vec<u8>, s: &str) {
    out.extend_from_slice(&(s.len() as u32).to_le_bytes());
    out.extend_from_slice(s.as_bytes());
}

/// Writes `MICIDFT1`, a length-prefixed JSON header, then one binary record
/// per fingerprint with values as little-endian f32.
pub fn save_features(
    path: &Path,
    variant: Variant,
    config_hash: &str,
    stats_ref: Option<&str>,
    records: &[FeatureRecord],
) -> Result<()> {
    let header = FeatureDumpHeader {
        format: "micid-features".into(),
        version: 1,
        variant,
        config_hash: config_hash.into(),
        stats_ref: stats_ref.map(str::to_string),
        records: records.len(),
    };
    let json = serde_json::to_vec(&header)?;
    let mut out = DUMP_MAGIC.to_vec();
    out.extend_from_slice(&(json.len() as u64).to_le_bytes());
    out.extend_from_slice(&json);
    for r in records {
        if r.fingerprint.variant != variant {
            return Err(Error::VariantMismatch(format!(
                "record {} is {}, dump is {}",
                r.id, r.fingerprint.variant, variant
            )));
        }
        put_str(&mut out, &r.id);
        put_str(&mut out, &r.device);
        put_str(&mut out, &r.speaker);
        out.push(variant.code());
        out.extend_from_slice(&(r.fingerprint.len() as u32).to_le_bytes());
        for v in &r.fingerprint.values {
            out.extend_from_slice(&(*v as f32).to_le_bytes());
        }
    }
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    std::fs::File::create(path)?.write_all(&out)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
    path: &'a Path,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            return Err(Error::format(self.path, "truncated feature dump"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn string(&mut self) -> Result<String> {
        let n = self.u32()? as usize;
        String::from_utf8(self.take(n)?.to_vec())
            .map_err(|_| Error::format(self.path, "invalid UTF-8 in record"))
    }
}

pub fn load_features(path: &Path) -> Result<(FeatureDumpHeader, Vec<FeatureRecord>)> {
    let mut buf = Vec::new();
    std::fs::File::open(path)
        .map_err(|_| Error::MissingFile(path.to_path_buf()))?
        .read_to_end(&mut buf)?;
    let mut cur = Cursor { buf: &buf, pos: 0, path };
    if cur.take(8)? != DUMP_MAGIC {
        return Err(Error::format(path, "not a feature dump"));
    }
    let hlen = u64::from_le_bytes(cur.take(8)?.try_into().unwrap()) as usize;
    let header: FeatureDumpHeader = serde_json::from_slice(cur.take(hlen)?)
        .map_err(|e| Error::format(path, e.to_string()))?;
    let mut records = Vec::with_capacity(header.records);
    for _ in 0..header.records {
        let id = cur.string()?;
        let device = cur.string()?;
        let speaker = cur.string()?;
        let variant = Variant::from_code(cur.take(1)?[0])
            .ok_or_else(|| Error::format(path, "unknown variant code"))?;
        let l = cur.u32()? as usize;
        let values = cur
            .take(4 * l)?
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
            .collect();
        records.push(FeatureRecord {
            fingerprint: Fingerprint::new(values, variant).with_source(id.clone()),
            id,
            device,
            speaker,
        });
    }
    if cur.pos != buf.len() {
        return Err(Error::format(path, "trailing bytes after last record"));
    }
    Ok((header, records))
}
