//! Line-delimited JSON dataset manifests.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::{Context, Result};
use micgraph_core::metrics::Condition;
use micgraph_core::sim::Point;
use serde::{Deserialize, Serialize};

/// One simulated mixture. Audio paths are relative to the manifest's directory
/// unless absolute.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub split: String,
    /// Multi-channel noisy WAV.
    pub noisy: PathBuf,
    /// Mono clean target at the reference microphone.
    pub clean: PathBuf,
    pub geometry: String,
    pub mics: usize,
    pub snr_db: f64,
    pub rt60: f64,
    pub room: Point,
    pub ref_channel: usize,
    pub samples: usize,
    /// Source files the mixture was built from (empty for synthetic sources).
    #[serde(default)]
    pub sources: Vec<String>,
}

impl ManifestEntry {
    pub fn condition(&self) -> Condition {
        Condition { geometry: self.geometry.clone(), mics: self.mics, snr_db: self.snr_db }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct Manifest {
    /// Directory that relative audio paths are resolved against.
    pub root: PathBuf,
    pub entries: Vec<ManifestEntry>,
}

impl Manifest {
    pub fn read(path: &Path) -> Result<Self> {
        let file = File::open(path).with_context(|| format!("cannot open manifest {}", path.display()))?;
        let mut entries = Vec::new();
        for (i, line) in BufReader::new(file).lines().enumerate() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let entry = serde_json::from_str(&line).with_context(|| format!("{}:{}: malformed entry", path.display(), i + 1))?;
            entries.push(entry);
        }
        let root = path.parent().map(Path::to_path_buf).unwrap_or_default();
        Ok(Self { root, entries })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let file = File::create(path).with_context(|| format!("cannot create manifest {}", path.display()))?;
        let mut w = BufWriter::new(file);
        for e in &self.entries {
            serde_json::to_writer(&mut w, e)?;
            w.write_all(b"\n")?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn resolve(&self, p: &Path) -> PathBuf {
        if p.is_absolute() {
            p.to_path_buf()
        } else {
            self.root.join(p)
        }
    }
}
