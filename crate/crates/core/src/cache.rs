//! On-disk embedding cache keyed by `(model id, image id)`.
//!
//! Entries also record a digest of the image bytes, so an image that changed
//! under the same id is re-embedded instead of served stale.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::model::ModelAdapter;
use crate::tensor::{preprocess, Embedding, RawImage};

pub const CACHE_DIR_ENV: &str = "XSSAB_CACHE_DIR";

/// `$XSSAB_CACHE_DIR`, else `$XDG_CACHE_HOME/xssab`, else `~/.cache/xssab`,
/// else `.xssab-cache` in the working directory.
pub fn default_cache_dir() -> PathBuf {
    if let Some(dir) = std::env::var_os(CACHE_DIR_ENV).filter(|d| !d.is_empty()) {
        return PathBuf::from(dir);
    }
    if let Some(dir) = std::env::var_os("XDG_CACHE_HOME").filter(|d| !d.is_empty()) {
        return PathBuf::from(dir).join("xssab");
    }
    if let Some(home) = std::env::var_os("HOME").filter(|d| !d.is_empty()) {
        return PathBuf::from(home).join(".cache").join("xssab");
    }
    PathBuf::from(".xssab-cache")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct Entry {
    digest: String,
    embedding: Vec<f64>,
}

#[derive(Debug, Serialize, Deserialize)]
struct CacheFile {
    model_id: String,
    entries: BTreeMap<String, Entry>,
}

#[derive(Debug)]
pub struct EmbeddingCache {
    path: PathBuf,
    file: CacheFile,
    dirty: bool,
    hits: usize,
    misses: usize,
}

fn image_digest(image: &RawImage) -> String {
    let mut h = Sha256::new();
    h.update((image.height() as u64).to_le_bytes());
    h.update((image.width() as u64).to_le_bytes());
    h.update(image.data());
    hex::encode(&h.finalize()[..16])
}

fn file_name(model_id: &str) -> String {
    let safe: String = model_id
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                c
            } else {
                '_'
            }
        })
        .collect();
    format!("{safe}.json")
}

impl EmbeddingCache {
    /// Opens (or starts) the cache file for `model_id` under `dir`. A corrupt
    /// file is discarded with a warning.
    pub fn open(dir: &Path, model_id: &str) -> Result<Self> {
        let path = dir.join(file_name(model_id));
        let empty = || CacheFile {
            model_id: model_id.to_string(),
            entries: BTreeMap::new(),
        };
        let file = match fs::read_to_string(&path) {
            Ok(text) => match serde_json::from_str::<CacheFile>(&text) {
                Ok(f) if f.model_id == model_id => f,
                Ok(_) => {
                    log::warn!(
                        "cache {} belongs to another model; starting fresh",
                        path.display()
                    );
                    empty()
                }
                Err(e) => {
                    log::warn!("ignoring unreadable cache {}: {e}", path.display());
                    empty()
                }
            },
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => empty(),
            Err(e) => return Err(Error::io(&path, e)),
        };
        Ok(Self {
            path,
            file,
            dirty: false,
            hits: 0,
            misses: 0,
        })
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn len(&self) -> usize {
        self.file.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.file.entries.is_empty()
    }

    pub fn hits(&self) -> usize {
        self.hits
    }

    pub fn misses(&self) -> usize {
        self.misses
    }

    /// Cached embedding for `id`, or embeds `image` and records it.
    pub fn embed<M: ModelAdapter + ?Sized>(
        &mut self,
        model: &M,
        id: &str,
        image: &RawImage,
    ) -> Result<Embedding> {
        let digest = image_digest(image);
        if let Some(entry) = self.file.entries.get(id) {
            if entry.digest == digest {
                self.hits += 1;
                log::debug!("cache hit: {id}");
                return Embedding::unit(entry.embedding.clone());
            }
        }
        self.misses += 1;
        let e = model.embed(&preprocess(image))?;
        self.file.entries.insert(
            id.to_string(),
            Entry {
                digest,
                embedding: e.values().to_vec(),
            },
        );
        self.dirty = true;
        Ok(e)
    }

    /// Writes the cache if anything was added.
    pub fn save(&mut self) -> Result<()> {
        if !self.dirty {
            return Ok(());
        }
        if let Some(parent) = self.path.parent() {
            fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        let text = serde_json::to_string(&self.file).map_err(|e| Error::Format(e.to_string()))?;
        fs::write(&self.path, text).map_err(|e| Error::io(&self.path, e))?;
        self.dirty = false;
        Ok(())
    }
}
