//! Content-addressed payload storage.
//!
//! Payloads live at `objects/<first two hex chars>/<content id>` under the
//! store root. Writing the same bytes twice is a no-op.

use std::collections::HashMap;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use crate::model::{content_id, ImageKind, ImageRef, Producer};

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("payload {0} not found in store")]
    Missing(String),
    #[error("payload {locator} is corrupt: expected id {expected}, found {actual}")]
    Corrupt {
        locator: String,
        expected: String,
        actual: String,
    },
    #[error(transparent)]
    Io(#[from] io::Error),
}

/// Storage for image payloads keyed by content id.
pub trait PayloadStore: Send + Sync {
    /// Stores `bytes`, returning `(content_id, locator)`.
    fn put(&self, bytes: &[u8]) -> Result<(String, String), StoreError>;
    fn get(&self, locator: &str) -> Result<Vec<u8>, StoreError>;

    /// Stores a payload and wraps it in an [`ImageRef`].
    fn put_image(
        &self,
        bytes: &[u8],
        kind: ImageKind,
        producer: Producer,
        step_index: u32,
    ) -> Result<ImageRef, StoreError> {
        let (id, locator) = self.put(bytes)?;
        ImageRef::new(id, kind, locator, producer, step_index)
            .map_err(|e| StoreError::Io(io::Error::new(io::ErrorKind::InvalidInput, e)))
    }

    /// Loads the payload behind `image`, verifying its content id.
    fn load(&self, image: &ImageRef) -> Result<Vec<u8>, StoreError> {
        let bytes = self.get(&image.locator)?;
        let actual = content_id(&bytes);
        if actual != image.content_id {
            return Err(StoreError::Corrupt {
                locator: image.locator.clone(),
                expected: image.content_id.clone(),
                actual,
            });
        }
        Ok(bytes)
    }
}

fn locator_for(id: &str) -> String {
    format!("objects/{}/{}", &id[..2], id)
}

/// Store backed by a directory on disk.
#[derive(Debug, Clone)]
pub struct DiskStore {
    root: PathBuf,
}

static TMP_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Writes `bytes` to `path` through a sibling temporary file and a rename, so
/// readers never observe a partially written file.
pub(crate) fn write_atomic(path: &Path, bytes: &[u8]) -> io::Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent)?;
    }
    let tmp = path.with_extension(format!(
        "tmp.{}.{}",
        std::process::id(),
        TMP_COUNTER.fetch_add(1, Ordering::Relaxed)
    ));
    std::fs::write(&tmp, bytes)?;
    std::fs::rename(&tmp, path)
}

impl DiskStore {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        DiskStore { root: root.into() }
    }

    pub fn root(&self) -> &Path {
        &self.root
    }
}

impl PayloadStore for DiskStore {
    fn put(&self, bytes: &[u8]) -> Result<(String, String), StoreError> {
        let id = content_id(bytes);
        let locator = locator_for(&id);
        let path = self.root.join(&locator);
        if !path.exists() {
            write_atomic(&path, bytes)?;
        }
        Ok((id, locator))
    }

    fn get(&self, locator: &str) -> Result<Vec<u8>, StoreError> {
        match std::fs::read(self.root.join(locator)) {
            Ok(b) => Ok(b),
            Err(e) if e.kind() == io::ErrorKind::NotFound => Err(StoreError::Missing(locator.to_owned())),
            Err(e) => Err(e.into()),
        }
    }
}

/// In-memory store, mostly for tests and ad-hoc simulation.
#[derive(Debug, Default)]
pub struct MemoryStore {
    objects: Mutex<HashMap<String, Vec<u8>>>,
}

impl MemoryStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.objects.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl PayloadStore for MemoryStore {
    fn put(&self, bytes: &[u8]) -> Result<(String, String), StoreError> {
        let id = content_id(bytes);
        let locator = locator_for(&id);
        self.objects
            .lock()
            .unwrap()
            .entry(locator.clone())
            .or_insert_with(|| bytes.to_vec());
        Ok((id, locator))
    }

    fn get(&self, locator: &str) -> Result<Vec<u8>, StoreError> {
        self.objects
            .lock()
            .unwrap()
            .get(locator)
            .cloned()
            .ok_or_else(|| StoreError::Missing(locator.to_owned()))
    }
}
