//! Content-addressed cache of expensive intermediates.
//!
//! Keys are SHA-256 digests over the content hashes of the input files and
//! every parameter that affects the value. Entries live in memory for the
//! life of the process and, when a directory is configured, on disk. A
//! cached value is bit-identical to a recomputed one.

use std::collections::HashMap;
use std::fs;
use std::io::Read;
use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};

use featalign_core::correlate::ScoreMatrix;
use featalign_core::FeatureStats;
use sha2::{Digest, Sha256};

use crate::error::{IoContext, Result};
use crate::formats::{read_score_matrix, write_score_matrix};
use crate::manifest::{read_json, write_json};

/// SHA-256 of a file's bytes, hex encoded.
pub fn hash_file(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path).at(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 20];
    loop {
        let n = f.read(&mut buf).at(path)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

/// Digest of an ordered list of key parts.
pub fn key(parts: &[&str]) -> String {
    let mut h = Sha256::new();
    for p in parts {
        h.update((p.len() as u64).to_le_bytes());
        h.update(p.as_bytes());
    }
    hex::encode(h.finalize())
}

#[derive(Debug, Default)]
pub struct Cache {
    dir: Option<PathBuf>,
    hashes: Mutex<HashMap<PathBuf, String>>,
    scores: Mutex<HashMap<String, Arc<ScoreMatrix>>>,
    stats: Mutex<HashMap<String, Arc<Vec<FeatureStats>>>>,
}

impl Cache {
    pub fn new(dir: Option<PathBuf>) -> Result<Self> {
        if let Some(d) = &dir {
            for sub in ["scores", "stats", "features"] {
                fs::create_dir_all(d.join(sub)).at(d.join(sub))?;
            }
        }
        Ok(Self {
            dir,
            ..Self::default()
        })
    }

    pub fn dir(&self) -> Option<&Path> {
        self.dir.as_deref()
    }

    /// Memoized [`hash_file`].
    pub fn file_hash(&self, path: &Path) -> Result<String> {
        if let Some(h) = self.hashes.lock().unwrap().get(path) {
            return Ok(h.clone());
        }
        let h = hash_file(path)?;
        self.hashes.lock().unwrap().insert(path.to_path_buf(), h.clone());
        Ok(h)
    }

    pub fn scores(&self, key: &str, compute: impl FnOnce() -> Result<ScoreMatrix>) -> Result<Arc<ScoreMatrix>> {
        if let Some(s) = self.scores.lock().unwrap().get(key) {
            return Ok(Arc::clone(s));
        }
        let stem = self.dir.as_ref().map(|d| d.join("scores").join(key));
        let value = match &stem {
            Some(stem) if stem.with_extension("json").exists() => read_score_matrix(stem)?,
            _ => {
                let v = compute()?;
                if let Some(stem) = &stem {
                    let tmp = stem.with_file_name(format!("{key}.tmp"));
                    write_score_matrix(&tmp, &v)?;
                    // data first, then the metadata whose presence marks the entry complete
                    fs::rename(tmp.with_extension("axt"), stem.with_extension("axt")).at(stem)?;
                    fs::rename(tmp.with_extension("json"), stem.with_extension("json")).at(stem)?;
                }
                v
            }
        };
        let value = Arc::new(value);
        self.scores.lock().unwrap().insert(key.to_string(), Arc::clone(&value));
        Ok(value)
    }

    pub fn stats(&self, key: &str, compute: impl FnOnce() -> Result<Vec<FeatureStats>>) -> Result<Arc<Vec<FeatureStats>>> {
        if let Some(s) = self.stats.lock().unwrap().get(key) {
            return Ok(Arc::clone(s));
        }
        let path = self.dir.as_ref().map(|d| d.join("stats").join(format!("{key}.json")));
        let value = match &path {
            Some(p) if p.exists() => read_json(p)?,
            _ => {
                let v = compute()?;
                if let Some(p) = &path {
                    let tmp = p.with_extension("tmp");
                    write_json(&tmp, &v)?;
                    fs::rename(&tmp, p).at(p)?;
                }
                v
            }
        };
        let value = Arc::new(value);
        self.stats.lock().unwrap().insert(key.to_string(), Arc::clone(&value));
        Ok(value)
    }

    /// Where an encoded feature tensor with this key belongs, if caching
    /// to disk.
    pub fn features_path(&self, key: &str) -> Option<PathBuf> {
        self.dir.as_ref().map(|d| d.join("features").join(format!("{key}.axt")))
    }
}
