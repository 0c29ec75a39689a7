use std::collections::HashMap;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::RwLock;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::RepoError;

/// Content address of a stored clip: lowercase hex SHA-256 of its WAV bytes.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClipRef(String);

impl ClipRef {
    pub fn for_bytes(bytes: &[u8]) -> Self {
        Self(hex::encode(Sha256::digest(bytes)))
    }

    /// Parses a reference, accepting only 64 lowercase hex digits.
    pub fn parse(s: &str) -> Result<Self, RepoError> {
        let ok = s.len() == 64 && s.bytes().all(|b| b.is_ascii_digit() || (b'a'..=b'f').contains(&b));
        if ok {
            Ok(Self(s.to_owned()))
        } else {
            Err(RepoError::Invalid(format!("malformed clip reference {s:?}")))
        }
    }

    pub fn as_str(&self) -> &str {
        &self.0
    }
}

impl std::fmt::Display for ClipRef {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

/// Content-addressed audio store.
#[derive(Debug)]
pub enum ClipStore {
    Memory(RwLock<HashMap<ClipRef, Vec<u8>>>),
    /// `clips/<sha256>.wav` below the given directory.
    Disk(PathBuf),
}

impl ClipStore {
    pub fn memory() -> Self {
        Self::Memory(RwLock::default())
    }

    pub fn disk(root: &Path) -> Result<Self, RepoError> {
        let dir = root.join("clips");
        fs::create_dir_all(&dir)?;
        Ok(Self::Disk(dir))
    }

    /// Stores `bytes`; storing the same content twice is a no-op.
    pub fn put(&self, bytes: &[u8]) -> Result<ClipRef, RepoError> {
        let r = ClipRef::for_bytes(bytes);
        match self {
            Self::Memory(map) => {
                map.write().expect("clip store poisoned").entry(r.clone()).or_insert_with(|| bytes.to_vec());
            }
            Self::Disk(dir) => {
                let path = dir.join(format!("{r}.wav"));
                if !path.exists() {
                    let tmp = dir.join(format!("{r}.tmp{}", std::process::id()));
                    let mut f = fs::File::create(&tmp)?;
                    f.write_all(bytes)?;
                    f.sync_all()?;
                    fs::rename(&tmp, &path)?;
                }
            }
        }
        Ok(r)
    }

    pub fn get(&self, r: &ClipRef) -> Result<Vec<u8>, RepoError> {
        match self {
            Self::Memory(map) => {
                map.read().expect("clip store poisoned").get(r).cloned().ok_or_else(|| RepoError::MissingClip(r.clone()))
            }
            Self::Disk(dir) => match fs::read(dir.join(format!("{r}.wav"))) {
                Ok(bytes) => Ok(bytes),
                Err(e) if e.kind() == std::io::ErrorKind::NotFound => Err(RepoError::MissingClip(r.clone())),
                Err(e) => Err(e.into()),
            },
        }
    }

    pub fn contains(&self, r: &ClipRef) -> bool {
        match self {
            Self::Memory(map) => map.read().expect("clip store poisoned").contains_key(r),
            Self::Disk(dir) => dir.join(format!("{r}.wav")).is_file(),
        }
    }
}
