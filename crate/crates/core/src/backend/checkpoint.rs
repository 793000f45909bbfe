use std::collections::HashMap;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};

use super::BackendError;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CheckpointRef {
    pub checkpoint_id: String,
    pub captured_state_version: u64,
    pub runtime_id: String,
}

/// Opaque parameter blobs keyed by checkpoint id. Reads may be concurrent.
pub trait CheckpointStore: Send + Sync {
    fn put(&self, checkpoint_id: &str, state: Vec<u8>) -> Result<(), BackendError>;
    fn get(&self, checkpoint_id: &str) -> Result<Vec<u8>, BackendError>;
}

#[derive(Default)]
pub struct MemoryCheckpointStore {
    blobs: RwLock<HashMap<String, Vec<u8>>>,
}

impl MemoryCheckpointStore {
    pub fn new() -> Self {
        Self::default()
    }
}

impl CheckpointStore for MemoryCheckpointStore {
    fn put(&self, checkpoint_id: &str, state: Vec<u8>) -> Result<(), BackendError> {
        self.blobs
            .write()
            .expect("checkpoint lock poisoned")
            .insert(checkpoint_id.to_string(), state);
        Ok(())
    }

    fn get(&self, checkpoint_id: &str) -> Result<Vec<u8>, BackendError> {
        self.blobs
            .read()
            .expect("checkpoint lock poisoned")
            .get(checkpoint_id)
            .cloned()
            .ok_or_else(|| BackendError::CheckpointNotFound(checkpoint_id.to_string()))
    }
}

/// One file per checkpoint under a run-scoped directory.
pub struct DirCheckpointStore {
    dir: PathBuf,
}

impl DirCheckpointStore {
    pub fn new(dir: impl Into<PathBuf>) -> Result<Self, BackendError> {
        let dir = dir.into();
        std::fs::create_dir_all(&dir)?;
        Ok(Self { dir })
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    fn path_for(&self, checkpoint_id: &str) -> PathBuf {
        let safe: String = checkpoint_id
            .chars()
            .map(|c| {
                if c.is_ascii_alphanumeric() || c == '-' || c == '_' {
                    c
                } else {
                    '_'
                }
            })
            .collect();
        self.dir.join(format!("{safe}.ckpt"))
    }
}

impl CheckpointStore for DirCheckpointStore {
    fn put(&self, checkpoint_id: &str, state: Vec<u8>) -> Result<(), BackendError> {
        let path = self.path_for(checkpoint_id);
        let tmp = path.with_extension("ckpt.tmp");
        std::fs::write(&tmp, state)?;
        std::fs::rename(&tmp, &path)?;
        Ok(())
    }

    fn get(&self, checkpoint_id: &str) -> Result<Vec<u8>, BackendError> {
        match std::fs::read(self.path_for(checkpoint_id)) {
            Ok(bytes) => Ok(bytes),
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
                Err(BackendError::CheckpointNotFound(checkpoint_id.to_string()))
            }
            Err(e) => Err(e.into()),
        }
    }
}
