//! Line-delimited JSON manifests.
//!
//! The first line is a header object (`format`, `version`, `seed`,
//! `config_hash`); each following line is one [`ManifestEntry`] with a fixed
//! field order. Relative paths resolve against the manifest's directory.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs;
use std::io::{BufRead, BufReader, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const MANIFEST_FORMAT: &str = "micid-manifest";
pub const MANIFEST_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Provenance {
    Original,
    Awgn,
    Simulated,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub path: PathBuf,
    pub device: String,
    pub speaker: String,
    pub provenance: Provenance,
    pub parent_id: Option<String>,
    pub snr_db: Option<f64>,
    pub seed: Option<u64>,
}

/// Sidecar metadata record: a manifest entry without provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SidecarRecord {
    pub id: String,
    pub path: PathBuf,
    pub device: String,
    pub speaker: String,
    #[serde(default)]
    pub parent_id: Option<String>,
    #[serde(default)]
    pub snr_db: Option<f64>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    format: String,
    version: u32,
    seed: u64,
    config_hash: String,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Manifest {
    pub entries: Vec<ManifestEntry>,
    pub seed: u64,
    pub config_hash: String,
    /// Directory relative entry paths resolve against.
    pub root: PathBuf,
}

impl Manifest {
    pub fn new(entries: Vec<ManifestEntry>, seed: u64, config_hash: impl Into<String>) -> Self {
        Manifest {
            entries,
            seed,
            config_hash: config_hash.into(),
            root: PathBuf::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn resolve(&self, entry: &ManifestEntry) -> PathBuf {
        if entry.path.is_absolute() {
            entry.path.clone()
        } else {
            self.root.join(&entry.path)
        }
    }

    pub fn with_entries(&self, entries: Vec<ManifestEntry>) -> Manifest {
        Manifest {
            entries,
            seed: self.seed,
            config_hash: self.config_hash.clone(),
            root: self.root.clone(),
        }
    }

    pub fn speakers(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.speaker.clone()).collect()
    }

    pub fn devices(&self) -> BTreeSet<String> {
        self.entries.iter().map(|e| e.device.clone()).collect()
    }

    pub fn get(&self, id: &str) -> Option<&ManifestEntry> {
        self.entries.iter().find(|e| e.id == id)
    }

    /// Checks id uniqueness and that every device was recorded by at least
    /// two speakers.
    pub fn validate(&self) -> Result<()> {
        let mut seen = HashSet::new();
        for e in &self.entries {
            if !seen.insert(e.id.as_str()) {
                return Err(Error::BadConfig(format!("duplicate recording id {}", e.id)));
            }
        }
        let mut per_device: BTreeMap<&str, BTreeSet<&str>> = BTreeMap::new();
        for e in &self.entries {
            per_device
                .entry(e.device.as_str())
                .or_default()
                .insert(e.speaker.as_str());
        }
        for (dev, speakers) in per_device {
            if speakers.len() < 2 {
                return Err(Error::BadConfig(format!(
                    "device {dev} has recordings from {} speaker(s), need at least 2",
                    speakers.len()
                )));
            }
        }
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let mut out = Vec::new();
        let header = Header {
            format: MANIFEST_FORMAT.into(),
            version: MANIFEST_VERSION,
            seed: self.seed,
            config_hash: self.config_hash.clone(),
        };
        serde_json::to_writer(&mut out, &header)?;
        out.push(b'\n');
        for e in &self.entries {
            serde_json::to_writer(&mut out, e)?;
            out.push(b'\n');
        }
        if let Some(dir) = path.parent() {
            if !dir.as_os_str().is_empty() {
                fs::create_dir_all(dir)?;
            }
        }
        fs::File::create(path)?.write_all(&out)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Manifest> {
        if !path.exists() {
            return Err(Error::MissingFile(path.to_path_buf()));
        }
        let reader = BufReader::new(fs::File::open(path)?);
        let mut lines = reader.lines();
        let first = lines
            .next()
            .ok_or_else(|| Error::format(path, "empty manifest"))??;
        let header: Header = serde_json::from_str(&first)
            .map_err(|e| Error::format(path, format!("bad header: {e}")))?;
        if header.format != MANIFEST_FORMAT || header.version != MANIFEST_VERSION {
            return Err(Error::format(path, "unsupported manifest format"));
        }
        let mut entries = Vec::new();
        for (i, line) in lines.enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let e: ManifestEntry = serde_json::from_str(&line)
                .map_err(|e| Error::format(path, format!("line {}: {e}", i + 2)))?;
            entries.push(e);
        }
        Ok(Manifest {
            entries,
            seed: header.seed,
            config_hash: header.config_hash,
            root: path.parent().map(Path::to_path_buf).unwrap_or_default(),
        })
    }
}

pub fn save_sidecar(path: &Path, records: &[SidecarRecord]) -> Result<()> {
    let mut out = Vec::new();
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.push(b'\n');
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_sidecar(path: &Path) -> Result<Vec<SidecarRecord>> {
    if !path.exists() {
        return Err(Error::MissingFile(path.to_path_buf()));
    }
    let text = fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| Error::format(path, format!("line {}: {e}", i + 1)))
        })
        .collect()
}

#[cfg(test)]
pub(crate) mod tests {
    use super::*;

    pub(crate) fn entry(id: &str, device: &str, speaker: &str) -> ManifestEntry {
        ManifestEntry {
            id: id.into(),
            path: format!("{id}.wav").into(),
            device: device.into(),
            speaker: speaker.into(),
            provenance: Provenance::Original,
            parent_id: None,
            snr_db: None,
            seed: None,
        }
    }

    #[test]
    fn save_load_keeps_entries_and_field_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("m.jsonl");
        let m = Manifest::new(vec![entry("a", "d1", "s1"), entry("b", "d1", "s2")], 9, "abc");
        m.save(&p).unwrap();
        let text = fs::read_to_string(&p).unwrap();
        let second = text.lines().nth(1).unwrap();
        assert_eq!(
            second,
            r#"{"id":"a","path":"a.wav","device":"d1","speaker":"s1","provenance":"original","parent_id":null,"snr_db":null,"seed":null}"#
        );
        let back = Manifest::load(&p).unwrap();
        assert_eq!(back.entries, m.entries);
        assert_eq!(back.seed, 9);
        assert_eq!(back.resolve(&back.entries[0]), dir.path().join("a.wav"));
    }

    #[test]
    fn validate_rules() {
        let m = Manifest::new(vec![entry("a", "d1", "s1"), entry("a", "d1", "s2")], 0, "");
        assert!(m.validate().is_err());
        let m = Manifest::new(vec![entry("a", "d1", "s1"), entry("b", "d1", "s1")], 0, "");
        assert!(m.validate().is_err());
        let m = Manifest::new(vec![entry("a", "d1", "s1"), entry("b", "d1", "s2")], 0, "");
        assert!(m.validate().is_ok());
    }
}
