use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::CorpusError;

/// One corpus record. `confidence` is the language-identification score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub id: String,
    pub lang: String,
    pub confidence: f64,
    pub grapheme: String,
    pub roman: String,
    pub n_frames: usize,
    pub feature_ref: String,
}

/// Keeps entries whose confidence is at least `threshold`, in order.
pub fn build_manifest(entries: &[ManifestEntry], threshold: f64) -> Vec<ManifestEntry> {
    assert!((0.0..=1.0).contains(&threshold), "threshold must be a probability");
    entries
        .iter()
        .filter(|e| e.confidence >= threshold)
        .cloned()
        .collect()
}

pub fn write_manifest(path: impl AsRef<Path>, entries: &[ManifestEntry]) -> Result<(), CorpusError> {
    if let Some(parent) = path.as_ref().parent() {
        std::fs::create_dir_all(parent)?;
    }
    let mut w = BufWriter::new(File::create(path)?);
    for e in entries {
        let line = serde_json::to_string(e).map_err(|err| CorpusError::Io(err.to_string()))?;
        writeln!(w, "{line}")?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_manifest(path: impl AsRef<Path>) -> Result<Vec<ManifestEntry>, CorpusError> {
    let r = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let e: ManifestEntry = serde_json::from_str(&line).map_err(|err| CorpusError::Manifest {
            line: i + 1,
            message: err.to_string(),
        })?;
        if !(0.0..=1.0).contains(&e.confidence) || e.n_frames == 0 {
            return Err(CorpusError::Manifest {
                line: i + 1,
                message: "confidence outside [0,1] or zero frames".into(),
            });
        }
        out.push(e);
    }
    Ok(out)
}
