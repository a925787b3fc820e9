//! Append-only response cache.
//!
//! Records are concatenated as
//! `hash(64 hex chars) \n kind \n payload_length \n payload bytes`, where
//! `kind` is `text` (UTF-8) or `embedding` (little-endian f64 values).

use std::collections::HashMap;
use std::fs::{File, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Mutex;
use std::time::{SystemTime, UNIX_EPOCH};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq)]
pub enum CacheValue {
    Text(String),
    Embedding(Vec<f64>),
}

impl CacheValue {
    fn kind(&self) -> &'static str {
        match self {
            CacheValue::Text(_) => "text",
            CacheValue::Embedding(_) => "embedding",
        }
    }

    fn payload(&self) -> Vec<u8> {
        match self {
            CacheValue::Text(s) => s.as_bytes().to_vec(),
            CacheValue::Embedding(v) => v.iter().flat_map(|x| x.to_le_bytes()).collect(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CacheEntry {
    pub key: String,
    pub value: CacheValue,
    /// Seconds since epoch; zero for entries read back from disk.
    pub created_at: u64,
}

/// Hex SHA-256 over the NUL-joined parts.
pub fn content_key(parts: &[&str]) -> String {
    let mut hasher = Sha256::new();
    for (k, part) in parts.iter().enumerate() {
        if k > 0 {
            hasher.update([0u8]);
        }
        hasher.update(part.as_bytes());
    }
    hex::encode(hasher.finalize())
}

#[derive(Debug, Default)]
pub struct ResponseCache {
    entries: Mutex<HashMap<String, CacheEntry>>,
    file: Option<Mutex<File>>,
    path: Option<PathBuf>,
}

impl ResponseCache {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Loads existing records from `path` (a torn final record is dropped)
    /// and appends new ones to it.
    pub fn open(path: &Path) -> Result<Self> {
        let mut entries = HashMap::new();
        if path.exists() {
            let bytes = std::fs::read(path)?;
            let (parsed, good_len) = parse_records(&bytes)?;
            for entry in parsed {
                entries.insert(entry.key.clone(), entry);
            }
            if good_len < bytes.len() {
                OpenOptions::new().write(true).open(path)?.set_len(good_len as u64)?;
            }
        }
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self {
            entries: Mutex::new(entries),
            file: Some(Mutex::new(file)),
            path: Some(path.to_path_buf()),
        })
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    pub fn len(&self) -> usize {
        self.entries.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn get(&self, key: &str) -> Option<CacheValue> {
        self.entries.lock().unwrap().get(key).map(|e| e.value.clone())
    }

    pub fn insert(&self, key: String, value: CacheValue) -> Result<()> {
        let mut entries = self.entries.lock().unwrap();
        if entries.contains_key(&key) {
            return Ok(());
        }
        if let Some(file) = &self.file {
            let record = encode_record(&key, &value);
            let mut f = file.lock().unwrap();
            f.write_all(&record)?;
            f.flush()?;
        }
        let created_at = SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map(|d| d.as_secs())
            .unwrap_or(0);
        entries.insert(
            key.clone(),
            CacheEntry {
                key,
                value,
                created_at,
            },
        );
        Ok(())
    }
}

fn encode_record(key: &str, value: &CacheValue) -> Vec<u8> {
    let payload = value.payload();
    let mut out = format!("{key}\n{}\n{}\n", value.kind(), payload.len()).into_bytes();
    out.extend_from_slice(&payload);
    out
}

fn parse_records(bytes: &[u8]) -> Result<(Vec<CacheEntry>, usize)> {
    let mut out = Vec::new();
    let mut pos = 0;
    let mut good = 0;
    let next_line = |pos: &mut usize| -> Option<String> {
        let rest = &bytes[*pos..];
        let nl = rest.iter().position(|&b| b == b'\n')?;
        let line = String::from_utf8(rest[..nl].to_vec()).ok()?;
        *pos += nl + 1;
        Some(line)
    };
    while pos < bytes.len() {
        let start = pos;
        let (Some(key), Some(kind), Some(len)) = (next_line(&mut pos), next_line(&mut pos), next_line(&mut pos)) else {
            log::warn!("cache: dropping torn record at byte {start}");
            break;
        };
        let len: usize = len
            .parse()
            .map_err(|_| Error::Artifact(format!("cache: bad payload length at byte {start}")))?;
        if pos + len > bytes.len() {
            log::warn!("cache: dropping torn record at byte {start}");
            break;
        }
        let payload = &bytes[pos..pos + len];
        pos += len;
        let value = match kind.as_str() {
            "text" => CacheValue::Text(
                String::from_utf8(payload.to_vec())
                    .map_err(|_| Error::Artifact("cache: text payload is not UTF-8".into()))?,
            ),
            "embedding" => {
                if !len.is_multiple_of(8) {
                    return Err(Error::Artifact("cache: embedding payload not a multiple of 8".into()));
                }
                CacheValue::Embedding(
                    payload
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                        .collect(),
                )
            }
            other => return Err(Error::Artifact(format!("cache: unknown payload kind {other:?}"))),
        };
        if key.len() != 64 {
            return Err(Error::Artifact(format!("cache: malformed key {key:?}")));
        }
        out.push(CacheEntry {
            key,
            value,
            created_at: 0,
        });
        good = pos;
    }
    Ok((out, good))
}
