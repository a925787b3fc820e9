//! Text K_r file:
//!
//! ```text
//! KREL 1
//! users <n> items <m>
//! noise <k>
//! <user> <item>          (k lines)
//! collab <k>
//! <user> <user>
//! interests <k>
//! <user> <item>
//! transcripts <k>
//! <user> <byte length>
//! <utf-8 bytes>\n        (per transcript)
//! ```

use std::collections::{BTreeMap, BTreeSet};

use super::RelationKnowledge;
use crate::error::{Error, Result};

const HEADER: &str = "KREL 1";

pub fn write_relation_knowledge(kr: &RelationKnowledge) -> Vec<u8> {
    let mut out = format!("{HEADER}\nusers {} items {}\n", kr.num_users, kr.num_items);
    for (name, set) in [
        ("noise", &kr.noise_edges),
        ("collab", &kr.collab_edges),
        ("interests", &kr.interest_edges),
    ] {
        out.push_str(&format!("{name} {}\n", set.len()));
        for (a, b) in set {
            out.push_str(&format!("{a} {b}\n"));
        }
    }
    out.push_str(&format!("transcripts {}\n", kr.transcripts.len()));
    for (u, text) in &kr.transcripts {
        out.push_str(&format!("{u} {}\n{text}\n", text.len()));
    }
    out.into_bytes()
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn line(&mut self) -> Result<&'a str> {
        let rest = &self.bytes[self.pos..];
        let end = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Artifact("K_r ends mid-line".into()))?;
        self.pos += end + 1;
        std::str::from_utf8(&rest[..end]).map_err(|_| Error::Artifact("K_r line is not UTF-8".into()))
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.bytes.len() {
            return Err(Error::Artifact("K_r transcript truncated".into()));
        }
        let out = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(out)
    }
}

fn numbers<const N: usize>(line: &str, labels: [Option<&str>; N]) -> Result<Vec<usize>> {
    let parts: Vec<&str> = line.split(' ').collect();
    let bad = || Error::Artifact(format!("malformed K_r line {line:?}"));
    let mut out = Vec::new();
    let mut it = parts.iter();
    for label in labels {
        if let Some(l) = label {
            if it.next() != Some(&l) {
                return Err(bad());
            }
        }
        out.push(it.next().ok_or_else(bad)?.parse().map_err(|_| bad())?);
    }
    if it.next().is_some() {
        return Err(bad());
    }
    Ok(out)
}

pub fn read_relation_knowledge(bytes: &[u8]) -> Result<RelationKnowledge> {
    let mut c = Cursor { bytes, pos: 0 };
    if c.line()? != HEADER {
        return Err(Error::Artifact("not a K_r file".into()));
    }
    let dims = numbers(c.line()?, [Some("users"), Some("items")])?;
    let mut sets: Vec<BTreeSet<(usize, usize)>> = Vec::new();
    for name in ["noise", "collab", "interests"] {
        let n = numbers(c.line()?, [Some(name)])?[0];
        let mut set = BTreeSet::new();
        for _ in 0..n {
            let pair = numbers(c.line()?, [None, None])?;
            set.insert((pair[0], pair[1]));
        }
        sets.push(set);
    }
    let n = numbers(c.line()?, [Some("transcripts")])?[0];
    let mut transcripts = BTreeMap::new();
    for _ in 0..n {
        let head = numbers(c.line()?, [None, None])?;
        let text = std::str::from_utf8(c.take(head[1])?)
            .map_err(|_| Error::Artifact("transcript is not UTF-8".into()))?
            .to_string();
        if c.take(1)? != b"\n" {
            return Err(Error::Artifact("transcript length mismatch".into()));
        }
        transcripts.insert(head[0], text);
    }
    if c.pos != bytes.len() {
        return Err(Error::Artifact("trailing bytes after K_r transcripts".into()));
    }
    let interest_edges = sets.pop().unwrap();
    let collab_edges = sets.pop().unwrap();
    let noise_edges = sets.pop().unwrap();
    Ok(RelationKnowledge {
        num_users: dims[0],
        num_items: dims[1],
        noise_edges,
        collab_edges,
        interest_edges,
        transcripts,
    })
}
