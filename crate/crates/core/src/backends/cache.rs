//! Content-addressed persistent cache for backend calls.
//!
//! Keys are SHA-256 digests of a canonical JSON envelope
//! `{"kind", "model", "payload"}`; values are the raw response text, stored
//! verbatim so a hit is byte-identical to the original response. Calls with
//! the same key are serialized: concurrent callers wait for the first one
//! instead of issuing a second request.

use std::collections::HashMap;
use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::Mutex;
use sha2::{Digest, Sha256};

#[derive(Debug, Default)]
pub struct CallCache {
    root: Option<PathBuf>,
    memory: Mutex<HashMap<String, String>>,
    key_locks: Mutex<HashMap<String, Arc<Mutex<()>>>>,
}

pub fn cache_key(kind: &str, model: &str, payload: &serde_json::Value) -> String {
    let envelope = serde_json::json!({
        "kind": kind,
        "model": model,
        "payload": payload,
    });
    // serde_json's default map is ordered, so this rendering is canonical.
    let digest = Sha256::digest(envelope.to_string().as_bytes());
    hex::encode(digest)
}

pub fn content_hash(text: &str) -> String {
    hex::encode(Sha256::digest(text.as_bytes()))
}

impl CallCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    pub fn open(root: impl AsRef<Path>) -> io::Result<Self> {
        let root = root.as_ref().to_path_buf();
        fs::create_dir_all(&root)?;
        Ok(Self {
            root: Some(root),
            ..Self::default()
        })
    }

    pub fn root(&self) -> Option<&Path> {
        self.root.as_deref()
    }

    fn path_for(&self, key: &str) -> Option<PathBuf> {
        self.root
            .as_ref()
            .map(|r| r.join(&key[..2.min(key.len())]).join(format!("{key}.txt")))
    }

    pub fn get(&self, key: &str) -> Option<String> {
        if let Some(v) = self.memory.lock().get(key) {
            return Some(v.clone());
        }
        let path = self.path_for(key)?;
        let value = fs::read_to_string(path).ok()?;
        self.memory.lock().insert(key.to_string(), value.clone());
        Some(value)
    }

    pub fn put(&self, key: &str, value: &str) -> io::Result<()> {
        if let Some(path) = self.path_for(key) {
            let dir = path.parent().expect("cache entries live in a shard dir");
            fs::create_dir_all(dir)?;
            let tmp = dir.join(format!(
                ".{key}.{}.{:?}.tmp",
                std::process::id(),
                std::thread::current().id()
            ));
            fs::write(&tmp, value)?;
            fs::rename(&tmp, &path)?;
        }
        self.memory
            .lock()
            .insert(key.to_string(), value.to_string());
        Ok(())
    }

    fn lock_for(&self, key: &str) -> Arc<Mutex<()>> {
        self.key_locks
            .lock()
            .entry(key.to_string())
            .or_default()
            .clone()
    }

    /// Returns the cached value (`true`) or computes and stores it (`false`).
    /// With `replay == false` the cache is written but never read.
    pub fn get_or_try_insert<E, F>(
        &self,
        key: &str,
        replay: bool,
        compute: F,
    ) -> Result<(String, bool), E>
    where
        F: FnOnce() -> Result<String, E>,
        E: From<io::Error>,
    {
        let lock = self.lock_for(key);
        let _guard = lock.lock();
        if replay {
            if let Some(hit) = self.get(key) {
                return Ok((hit, true));
            }
        }
        let value = compute()?;
        self.put(key, &value)?;
        Ok((value, false))
    }

    pub fn len(&self) -> usize {
        self.memory.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
