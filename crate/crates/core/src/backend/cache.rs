use std::fs;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{BackendError, LogprobBackend, LogprobQuery, LogprobResult};

/// SHA-256 over the length-prefixed query fields, hex encoded.
pub fn cache_key(query: &LogprobQuery) -> String {
    let mut hasher = Sha256::new();
    for field in [&query.model_id, &query.context, &query.continuation] {
        hasher.update((field.len() as u64).to_le_bytes());
        hasher.update(field.as_bytes());
    }
    hex::encode(hasher.finalize())
}

#[derive(Serialize, Deserialize)]
struct Entry {
    model: String,
    context: String,
    continuation: String,
    tokens: Vec<String>,
    logprobs: Vec<f64>,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Memoizes an inner backend on disk, one JSON file per query.
///
/// Writes go through a uniquely named temp file and an atomic rename, so
/// concurrent writers of the same key leave one complete entry behind.
#[derive(Debug)]
pub struct CachedBackend<B> {
    inner: B,
    dir: PathBuf,
}

impl<B: LogprobBackend> CachedBackend<B> {
    pub fn new(inner: B, dir: impl Into<PathBuf>) -> io::Result<Self> {
        let dir = dir.into();
        fs::create_dir_all(&dir)?;
        Ok(Self { inner, dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn inner(&self) -> &B {
        &self.inner
    }

    fn path_for(&self, query: &LogprobQuery) -> PathBuf {
        self.dir.join(format!("{}.json", cache_key(query)))
    }

    fn read(&self, path: &Path, query: &LogprobQuery) -> Option<LogprobResult> {
        let bytes = match fs::read(path) {
            Ok(b) => b,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return None,
            Err(e) => {
                log::warn!("cache read {} failed: {e}", path.display());
                return None;
            }
        };
        let parsed = serde_json::from_slice::<Entry>(&bytes)
            .map_err(|e| e.to_string())
            .and_then(|entry| {
                if entry.model != query.model_id || entry.context != query.context || entry.continuation != query.continuation {
                    return Err("entry belongs to a different query".into());
                }
                LogprobResult { token_texts: entry.tokens, token_logprobs: entry.logprobs }
                    .validated(query)
                    .map_err(|e| e.to_string())
            });
        match parsed {
            Ok(result) => Some(result),
            Err(reason) => {
                log::warn!("discarding corrupt cache entry {}: {reason}", path.display());
                let _ = fs::remove_file(path);
                None
            }
        }
    }

    fn write(&self, path: &Path, query: &LogprobQuery, result: &LogprobResult) -> io::Result<()> {
        let entry = Entry {
            model: query.model_id.clone(),
            context: query.context.clone(),
            continuation: query.continuation.clone(),
            tokens: result.token_texts.clone(),
            logprobs: result.token_logprobs.clone(),
        };
        let tmp = self.dir.join(format!(
            ".{}.{}.{}.tmp",
            cache_key(query),
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        let mut file = fs::File::create(&tmp)?;
        serde_json::to_writer(&mut file, &entry)?;
        file.write_all(b"\n")?;
        file.sync_all()?;
        drop(file);
        fs::rename(&tmp, path).inspect_err(|_| {
            let _ = fs::remove_file(&tmp);
        })
    }
}

impl<B: LogprobBackend> LogprobBackend for CachedBackend<B> {
    fn score(&self, query: &LogprobQuery) -> Result<LogprobResult, BackendError> {
        query.validate()?;
        let path = self.path_for(query);
        if let Some(hit) = self.read(&path, query) {
            return Ok(hit);
        }
        let result = self.inner.score(query)?.validated(query)?;
        if let Err(e) = self.write(&path, query, &result) {
            log::warn!("cache write {} failed: {e}", path.display());
        }
        Ok(result)
    }
}
