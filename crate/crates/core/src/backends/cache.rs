use std::io;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::model::{ImageKind, TokenUsage};
use crate::store::write_atomic;

/// Sidecar stored next to each cached response.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CacheMeta {
    pub role: String,
    pub backend: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub kind: Option<ImageKind>,
    pub seconds: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
}

/// Response cache laid out as `<root>/<first two hex chars>/<key>` holding
/// the raw response bytes, with metadata in `<key>.meta.json`.
///
/// Entries are written payload first, sidecar last, each atomically, so an
/// entry is visible only once complete. Concurrent writers of the same key
/// write identical bytes.
#[derive(Debug, Clone)]
pub struct ResponseCache {
    root: PathBuf,
}

impl ResponseCache {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        ResponseCache { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }

    fn paths(&self, key: &str) -> (PathBuf, PathBuf) {
        let dir = self.root.join(&key[..2]);
        (dir.join(key), dir.join(format!("{key}.meta.json")))
    }

    pub fn get(&self, key: &str) -> io::Result<Option<(Vec<u8>, CacheMeta)>> {
        let (payload, sidecar) = self.paths(key);
        let meta = match std::fs::read(&sidecar) {
            Ok(m) => m,
            Err(e) if e.kind() == io::ErrorKind::NotFound => return Ok(None),
            Err(e) => return Err(e),
        };
        let meta: CacheMeta = serde_json::from_slice(&meta).map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
        Ok(Some((std::fs::read(payload)?, meta)))
    }

    pub fn put(&self, key: &str, bytes: &[u8], meta: &CacheMeta) -> io::Result<()> {
        let (payload, sidecar) = self.paths(key);
        write_atomic(&payload, bytes)?;
        let mut json = serde_json::to_vec_pretty(meta).expect("metadata serializes");
        json.push(b'\n');
        write_atomic(&sidecar, &json)
    }

    /// Number of complete entries.
    pub fn len(&self) -> usize {
        let Ok(dirs) = std::fs::read_dir(&self.root) else { return 0 };
        dirs.flatten()
            .filter_map(|d| std::fs::read_dir(d.path()).ok())
            .flat_map(|entries| entries.flatten())
            .filter(|e| e.file_name().to_string_lossy().ends_with(".meta.json"))
            .count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}
