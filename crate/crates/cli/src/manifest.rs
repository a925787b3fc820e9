//! Run manifest: the artifacts a work directory holds and their hashes.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::failure::Failure;

pub const FILE: &str = "manifest.json";

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ArtifactEntry {
    /// Relative to the work directory.
    pub path: String,
    pub sha256: String,
    pub command: String,
    pub written_at: u64,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub tool_version: String,
    pub config_hash: Option<String>,
    /// Seed used by each command.
    pub seeds: BTreeMap<String, u64>,
    pub artifacts: BTreeMap<String, ArtifactEntry>,
    pub updated_at: u64,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn now() -> u64 {
    SystemTime::now().duration_since(UNIX_EPOCH).map_or(0, |d| d.as_secs())
}

/// Work directory plus its manifest.
pub struct Workspace {
    pub dir: PathBuf,
    pub manifest: RunManifest,
}

impl Workspace {
    pub fn open(dir: &Path) -> Result<Self, Failure> {
        std::fs::create_dir_all(dir).map_err(|e| Failure::data(format!("cannot create {}: {e}", dir.display())))?;
        let path = dir.join(FILE);
        let manifest = if path.exists() {
            let text = std::fs::read_to_string(&path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
            serde_json::from_str(&text).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?
        } else {
            RunManifest::default()
        };
        Ok(Self {
            dir: dir.to_path_buf(),
            manifest,
        })
    }

    pub fn path(&self, name: &str) -> PathBuf {
        self.dir.join(name)
    }

    /// Reads an artifact, refusing it when its hash disagrees with the
    /// manifest.
    pub fn read(&self, name: &str) -> Result<Vec<u8>, Failure> {
        let path = self.path(name);
        if !path.exists() {
            return Err(Failure::data(format!("missing artifact {name} ({})", path.display())));
        }
        let bytes = std::fs::read(&path).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        if let Some(entry) = self.manifest.artifacts.get(name) {
            let got = sha256_hex(&bytes);
            if got != entry.sha256 {
                return Err(Failure::data(format!(
                    "artifact {name} does not match the manifest (expected sha256 {}, found {got})",
                    entry.sha256
                )));
            }
        }
        Ok(bytes)
    }

    pub fn exists(&self, name: &str) -> bool {
        self.path(name).exists()
    }

    /// Every artifact the manifest lists must exist with its stored hash.
    pub fn verify_all(&self) -> Result<(), Failure> {
        for name in self.manifest.artifacts.keys() {
            self.read(name)?;
        }
        Ok(())
    }

    pub fn write(&mut self, name: &str, bytes: &[u8], command: &str) -> Result<PathBuf, Failure> {
        let path = self.path(name);
        std::fs::write(&path, bytes).map_err(|e| Failure::data(format!("{}: {e}", path.display())))?;
        self.manifest.artifacts.insert(
            name.to_string(),
            ArtifactEntry {
                path: name.to_string(),
                sha256: sha256_hex(bytes),
                command: command.to_string(),
                written_at: now(),
            },
        );
        Ok(path)
    }

    pub fn record_seed(&mut self, command: &str, seed: u64) {
        self.manifest.seeds.insert(command.to_string(), seed);
    }

    pub fn save(&mut self) -> Result<(), Failure> {
        self.manifest.tool_version = env!("CARGO_PKG_VERSION").to_string();
        self.manifest.updated_at = now();
        let text = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        let path = self.path(FILE);
        std::fs::write(&path, text + "\n").map_err(|e| Failure::data(format!("{}: {e}", path.display())))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn written_artifacts_verify_and_tampering_is_refused() {
        let dir = tempfile::tempdir().unwrap();
        let mut ws = Workspace::open(dir.path()).unwrap();
        ws.write("a.txt", b"hello", "test").unwrap();
        ws.save().unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        assert_eq!(ws.read("a.txt").unwrap(), b"hello");
        ws.verify_all().unwrap();
        std::fs::write(dir.path().join("a.txt"), b"hellO").unwrap();
        let err = ws.read("a.txt").unwrap_err();
        assert_eq!(err.code, 3);
        assert!(err.message.contains("does not match"), "{}", err.message);
        std::fs::remove_file(dir.path().join("a.txt")).unwrap();
        assert!(ws.verify_all().unwrap_err().message.contains("missing artifact a.txt"));
    }

    #[test]
    fn unlisted_files_are_read_as_is() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("b"), b"x").unwrap();
        let ws = Workspace::open(dir.path()).unwrap();
        assert_eq!(ws.read("b").unwrap(), b"x");
        assert_eq!(sha256_hex(b""), "e3b0c44298fc1c149afbf4c8996fb92427ae41e4649b934ca495991b7852b855");
    }
}
