//! Binary K_p file: `KPRF`, format version, then little-endian u64 counts
//! (users, items, d, d_t), four row-major f32 matrices (Ẽ_u, Ẽ_i, T_u, T_i),
//! and a text section with one escaped tab-separated line per subject:
//! `kind \t index \t profile \t keyword \t keyword ...`.

use std::io::{Read, Write};

use ndarray::Array2;

use super::{KeywordSets, PreferenceKnowledge, Profiles};
use crate::error::{Error, Result};

const MAGIC: &[u8; 4] = b"KPRF";
const VERSION: u32 = 1;

fn escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '\\' => out.push_str("\\\\"),
            '\t' => out.push_str("\\t"),
            '\n' => out.push_str("\\n"),
            '\r' => out.push_str("\\r"),
            c => out.push(c),
        }
    }
    out
}

fn unescape(s: &str) -> Result<String> {
    let mut out = String::with_capacity(s.len());
    let mut chars = s.chars();
    while let Some(c) = chars.next() {
        if c != '\\' {
            out.push(c);
            continue;
        }
        match chars.next() {
            Some('\\') => out.push('\\'),
            Some('t') => out.push('\t'),
            Some('n') => out.push('\n'),
            Some('r') => out.push('\r'),
            other => return Err(Error::Artifact(format!("bad escape \\{other:?} in K_p text"))),
        }
    }
    Ok(out)
}

fn write_matrix<W: Write>(w: &mut W, m: &Array2<f64>) -> Result<()> {
    let mut buf = Vec::with_capacity(m.len() * 4);
    for v in m.iter() {
        buf.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    w.write_all(&buf)?;
    Ok(())
}

fn read_matrix<R: Read>(r: &mut R, rows: usize, cols: usize) -> Result<Array2<f64>> {
    let mut buf = vec![0u8; rows * cols * 4];
    r.read_exact(&mut buf)?;
    let values = buf
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64)
        .collect();
    Ok(Array2::from_shape_vec((rows, cols), values).expect("sized buffer"))
}

fn read_u64<R: Read>(r: &mut R) -> Result<usize> {
    let mut b = [0u8; 8];
    r.read_exact(&mut b)?;
    usize::try_from(u64::from_le_bytes(b)).map_err(|_| Error::Artifact("count overflows usize".into()))
}

pub fn write_preference_knowledge<W: Write>(w: &mut W, kp: &PreferenceKnowledge) -> Result<()> {
    w.write_all(MAGIC)?;
    w.write_all(&VERSION.to_le_bytes())?;
    for n in [kp.num_users(), kp.num_items(), kp.dim(), kp.text_dim()] {
        w.write_all(&(n as u64).to_le_bytes())?;
    }
    write_matrix(w, &kp.user_embeddings)?;
    write_matrix(w, &kp.item_embeddings)?;
    write_matrix(w, &kp.user_text)?;
    write_matrix(w, &kp.item_text)?;
    let mut text = String::new();
    let sections = [
        ("u", &kp.profiles.users, &kp.keywords.users),
        ("i", &kp.profiles.items, &kp.keywords.items),
    ];
    for (kind, profiles, keywords) in sections {
        for (idx, (p, kws)) in profiles.iter().zip(keywords).enumerate() {
            text.push_str(&format!("{kind}\t{idx}\t{}", escape(p)));
            for k in kws {
                text.push('\t');
                text.push_str(&escape(k));
            }
            text.push('\n');
        }
    }
    w.write_all(text.as_bytes())?;
    Ok(())
}

pub fn read_preference_knowledge<R: Read>(r: &mut R) -> Result<PreferenceKnowledge> {
    let mut magic = [0u8; 4];
    r.read_exact(&mut magic)?;
    if &magic != MAGIC {
        return Err(Error::Artifact("not a K_p file".into()));
    }
    let mut vb = [0u8; 4];
    r.read_exact(&mut vb)?;
    let version = u32::from_le_bytes(vb);
    if version != VERSION {
        return Err(Error::Artifact(format!("unsupported K_p version {version}")));
    }
    let nu = read_u64(r)?;
    let ni = read_u64(r)?;
    let d = read_u64(r)?;
    let d_t = read_u64(r)?;
    let user_embeddings = read_matrix(r, nu, d)?;
    let item_embeddings = read_matrix(r, ni, d)?;
    let user_text = read_matrix(r, nu, d_t)?;
    let item_text = read_matrix(r, ni, d_t)?;
    let mut text = String::new();
    r.read_to_string(&mut text)
        .map_err(|e| Error::Artifact(format!("K_p text section: {e}")))?;

    let mut profiles = PartialProfiles {
        users: vec![None; nu],
        items: vec![None; ni],
    };
    let mut keywords: (Vec<Vec<String>>, Vec<Vec<String>>) = (vec![Vec::new(); nu], vec![Vec::new(); ni]);
    for line in text.lines() {
        let mut parts = line.split('\t');
        let (Some(kind), Some(idx), Some(profile)) = (parts.next(), parts.next(), parts.next()) else {
            return Err(Error::Artifact(format!("short K_p text line {line:?}")));
        };
        let idx: usize = idx
            .parse()
            .map_err(|_| Error::Artifact(format!("bad index in K_p line {line:?}")))?;
        let kws = parts.map(unescape).collect::<Result<Vec<_>>>()?;
        let (slots, kw_slots, limit) = match kind {
            "u" => (&mut profiles.users, &mut keywords.0, nu),
            "i" => (&mut profiles.items, &mut keywords.1, ni),
            other => return Err(Error::Artifact(format!("unknown subject kind {other:?}"))),
        };
        if idx >= limit {
            return Err(Error::IndexBounds {
                what: "K_p subject",
                index: idx,
                limit,
            });
        }
        slots[idx] = Some(unescape(profile)?);
        kw_slots[idx] = kws;
    }
    let finish = |v: Vec<Option<String>>, kind: &str| {
        v.into_iter()
            .enumerate()
            .map(|(i, p)| p.ok_or_else(|| Error::Artifact(format!("K_p lacks text for {kind} {i}"))))
            .collect::<Result<Vec<_>>>()
    };
    Ok(PreferenceKnowledge {
        profiles: Profiles {
            users: finish(profiles.users, "user")?,
            items: finish(profiles.items, "item")?,
        },
        keywords: KeywordSets {
            users: keywords.0,
            items: keywords.1,
        },
        user_text,
        item_text,
        user_embeddings,
        item_embeddings,
    })
}

struct PartialProfiles {
    users: Vec<Option<String>>,
    items: Vec<Option<String>>,
}
