//! Content-addressed artifact store: `<root>/<kind>/<key>` plus a sidecar
//! metadata record per artifact. Writes go through a temp file and a rename
//! so a reader never observes a partially written payload.

use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{de::DeserializeOwned, Deserialize, Serialize};

use super::DataIoError;

const META_SUFFIX: &str = ".meta.json";
const SCHEMA_VERSION: u32 = 1;

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Sidecar record written next to every payload.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ArtifactMeta {
    pub schema_version: u32,
    pub created_unix: u64,
    pub bytes: u64,
}

/// Proof of a completed write.
#[derive(Debug, Clone)]
pub struct StorageReceipt {
    pub kind: String,
    pub key: String,
    pub path: PathBuf,
    /// True when this write replaced an existing payload under the same key.
    pub superseded: bool,
}

/// Filesystem-backed store keyed by `(kind, key)`.
///
/// Writes are serialized through one lock; reads are lock-free. A fixed
/// timestamp makes the whole tree byte-reproducible, which replay-mode
/// pipelines rely on.
pub struct ArtifactStore {
    root: PathBuf,
    fixed_timestamp: Option<u64>,
    write_lock: Mutex<()>,
}

fn encode_key(key: &str) -> Result<String, DataIoError> {
    if key.is_empty() {
        return Err(DataIoError::EmptyKey);
    }
    if key.ends_with(META_SUFFIX) {
        return Err(DataIoError::InvalidKey(key.into()));
    }
    let mut out = String::with_capacity(key.len());
    for (i, b) in key.bytes().enumerate() {
        let safe = b.is_ascii_alphanumeric()
            || b == b'_'
            || b == b'-'
            || (b == b'.' && i > 0);
        if safe {
            out.push(b as char);
        } else {
            out.push('%');
            out.push_str(&format!("{b:02X}"));
        }
    }
    Ok(out)
}

fn decode_key(encoded: &str) -> String {
    let bytes = encoded.as_bytes();
    let mut out = Vec::with_capacity(bytes.len());
    let mut i = 0;
    while i < bytes.len() {
        if bytes[i] == b'%' && i + 2 < bytes.len() {
            if let Ok(v) = u8::from_str_radix(&encoded[i + 1..i + 3], 16) {
                out.push(v);
                i += 3;
                continue;
            }
        }
        out.push(bytes[i]);
        i += 1;
    }
    String::from_utf8_lossy(&out).into_owned()
}

impl ArtifactStore {
    pub fn open(root: impl Into<PathBuf>) -> Result<ArtifactStore, DataIoError> {
        let root = root.into();
        std::fs::create_dir_all(&root)?;
        Ok(ArtifactStore { root, fixed_timestamp: None, write_lock: Mutex::new(()) })
    }

    /// Like [`ArtifactStore::open`], but every sidecar records `timestamp`
    /// instead of wall-clock time. Used by replay runs so reruns produce
    /// byte-identical trees.
    pub fn with_fixed_timestamp(
        root: impl Into<PathBuf>,
        timestamp: u64,
    ) -> Result<ArtifactStore, DataIoError> {
        let mut store = ArtifactStore::open(root)?;
        store.fixed_timestamp = Some(timestamp);
        Ok(store)
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn payload_path(&self, kind: &str, key: &str) -> Result<PathBuf, DataIoError> {
        if kind.is_empty() || !kind.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'_') {
            return Err(DataIoError::InvalidKey(format!("kind `{kind}`")));
        }
        Ok(self.root.join(kind).join(encode_key(key)?))
    }

    fn write_atomic(&self, path: &Path, bytes: &[u8]) -> Result<(), DataIoError> {
        let dir = path.parent().expect("payload path has a parent");
        let tmp = dir.join(format!(
            ".tmp-{}-{}",
            std::process::id(),
            TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
        ));
        std::fs::write(&tmp, bytes)?;
        std::fs::rename(&tmp, path)?;
        Ok(())
    }

    fn now(&self) -> u64 {
        self.fixed_timestamp.unwrap_or_else(|| {
            SystemTime::now()
                .duration_since(UNIX_EPOCH)
                .map(|d| d.as_secs())
                .unwrap_or(0)
        })
    }

    /// Stores `payload` under `(kind, key)`, replacing any previous version.
    pub fn persist(
        &self,
        kind: &str,
        key: &str,
        payload: &[u8],
    ) -> Result<StorageReceipt, DataIoError> {
        let path = self.payload_path(kind, key)?;
        let _guard = self.write_lock.lock().expect("store lock poisoned");
        std::fs::create_dir_all(path.parent().expect("has parent"))?;
        let superseded = path.exists();
        self.write_atomic(&path, payload)?;
        let meta = ArtifactMeta {
            schema_version: SCHEMA_VERSION,
            created_unix: self.now(),
            bytes: payload.len() as u64,
        };
        let meta_path = path.with_file_name(format!(
            "{}{}",
            path.file_name().expect("has name").to_string_lossy(),
            META_SUFFIX
        ));
        self.write_atomic(&meta_path, &serde_json::to_vec(&meta)?)?;
        Ok(StorageReceipt { kind: kind.into(), key: key.into(), path, superseded })
    }

    pub fn load(&self, kind: &str, key: &str) -> Result<Vec<u8>, DataIoError> {
        let path = self.payload_path(kind, key)?;
        match std::fs::read(&path) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(DataIoError::NotFound { kind: kind.into(), key: key.into() })
            }
            Err(e) => Err(e.into()),
        }
    }

    pub fn exists(&self, kind: &str, key: &str) -> bool {
        self.payload_path(kind, key).map(|p| p.exists()).unwrap_or(false)
    }

    pub fn meta(&self, kind: &str, key: &str) -> Result<ArtifactMeta, DataIoError> {
        let path = self.payload_path(kind, key)?;
        let meta_path = path.with_file_name(format!(
            "{}{}",
            path.file_name().expect("has name").to_string_lossy(),
            META_SUFFIX
        ));
        let bytes = std::fs::read(&meta_path).map_err(|_| DataIoError::NotFound {
            kind: kind.into(),
            key: key.into(),
        })?;
        Ok(serde_json::from_slice(&bytes)?)
    }

    /// Sorted list of keys stored under `kind`.
    pub fn list(&self, kind: &str) -> Result<Vec<String>, DataIoError> {
        let dir = self.root.join(kind);
        let mut keys = Vec::new();
        let entries = match std::fs::read_dir(&dir) {
            Ok(e) => e,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok(keys),
            Err(e) => return Err(e.into()),
        };
        for entry in entries {
            let name = entry?.file_name().to_string_lossy().into_owned();
            if name.ends_with(META_SUFFIX) || name.starts_with(".tmp-") {
                continue;
            }
            keys.push(decode_key(&name));
        }
        keys.sort();
        Ok(keys)
    }

    pub fn persist_json<T: Serialize>(
        &self,
        kind: &str,
        key: &str,
        value: &T,
    ) -> Result<StorageReceipt, DataIoError> {
        self.persist(kind, key, &serde_json::to_vec(value)?)
    }

    pub fn load_json<T: DeserializeOwned>(&self, kind: &str, key: &str) -> Result<T, DataIoError> {
        Ok(serde_json::from_slice(&self.load(kind, key)?)?)
    }
}

impl std::fmt::Debug for ArtifactStore {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ArtifactStore")
            .field("root", &self.root)
            .field("fixed_timestamp", &self.fixed_timestamp)
            .finish()
    }
}
