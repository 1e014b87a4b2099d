//! Content-addressed response cache.
//!
//! Responses are stored under the SHA-256 digest of the canonical request
//! body, so any change to the transcript, decoding parameters, or model
//! yields a different key. Files carry no timestamps; re-running a cached
//! evaluation rewrites nothing and produces byte-identical state.

use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Mutex;

use aidet_core::ModelResponse;

#[derive(Debug, thiserror::Error)]
pub enum CacheError {
    #[error("cache io error at {path}: {message}")]
    Io { path: String, message: String },
    #[error("corrupt cache entry {path}: {message}")]
    Corrupt { path: String, message: String },
    #[error("cache entry {path} stores digest {stored} but was looked up as {requested}")]
    DigestMismatch { path: String, stored: String, requested: String },
}

/// On-disk format of one cached response.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct CacheEntry {
    digest: String,
    model: String,
    response: ModelResponse,
}

/// Line format of the append-only index journal.
#[derive(Debug, serde::Serialize, serde::Deserialize)]
struct IndexLine {
    digest: String,
    model: String,
}

/// Disk layout: `obj/<first two hex chars>/<digest>.json` plus an
/// append-only `index.jsonl` journal listing every stored digest.
pub struct ResponseCache {
    root: PathBuf,
    /// Serializes journal appends across worker threads.
    index_lock: Mutex<()>,
}

impl ResponseCache {
    pub fn open(root: impl Into<PathBuf>) -> Result<Self, CacheError> {
        let root = root.into();
        fs::create_dir_all(root.join("obj")).map_err(|e| CacheError::Io {
            path: root.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(Self { root, index_lock: Mutex::new(()) })
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn object_path(&self, digest: &str) -> PathBuf {
        let shard = digest.get(..2).unwrap_or("xx");
        self.root.join("obj").join(shard).join(format!("{digest}.json"))
    }

    /// Fetches the response stored for `digest`, if any. An entry whose
    /// stored digest differs from the requested one is an error, never a
    /// response for the wrong request.
    pub fn get(&self, digest: &str) -> Result<Option<ModelResponse>, CacheError> {
        let path = self.object_path(digest);
        let text = match fs::read_to_string(&path) {
            Ok(t) => t,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(None),
            Err(e) => {
                return Err(CacheError::Io { path: path.display().to_string(), message: e.to_string() })
            }
        };
        let entry: CacheEntry = serde_json::from_str(&text).map_err(|e| CacheError::Corrupt {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        if entry.digest != digest {
            return Err(CacheError::DigestMismatch {
                path: path.display().to_string(),
                stored: entry.digest,
                requested: digest.to_string(),
            });
        }
        Ok(Some(entry.response))
    }

    /// Stores a response under `digest`. Writes go to a temporary file that
    /// is renamed into place, so concurrent writers of the same digest are
    /// idempotent and readers never observe partial files.
    pub fn put(&self, digest: &str, model: &str, response: &ModelResponse) -> Result<(), CacheError> {
        let path = self.object_path(digest);
        let io_err = |e: std::io::Error| CacheError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        };
        let parent = path.parent().expect("object path has a parent");
        fs::create_dir_all(parent).map_err(io_err)?;

        let entry = CacheEntry {
            digest: digest.to_string(),
            model: model.to_string(),
            response: response.clone(),
        };
        let body = serde_json::to_string_pretty(&entry).expect("entry serializes");
        let tmp = parent.join(format!(".{digest}.tmp.{}", std::process::id()));
        fs::write(&tmp, &body).map_err(io_err)?;
        fs::rename(&tmp, &path).map_err(io_err)?;

        let line = serde_json::to_string(&IndexLine {
            digest: digest.to_string(),
            model: model.to_string(),
        })
        .expect("index line serializes");
        let index_path = self.root.join("index.jsonl");
        let _guard = self.index_lock.lock().expect("index lock");
        let mut file = fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(&index_path)
            .map_err(|e| CacheError::Io {
                path: index_path.display().to_string(),
                message: e.to_string(),
            })?;
        writeln!(file, "{line}").map_err(|e| CacheError::Io {
            path: index_path.display().to_string(),
            message: e.to_string(),
        })?;
        Ok(())
    }
}
