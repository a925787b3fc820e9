//! Offline rule-based provider. It reads the structured blocks the knowledge
//! pipelines put into prompts and answers from a keyword rule table, so
//! every response is a pure function of the prompt and the rules.
//!
//! Rules per task:
//! - `profile`: keywords from the table, else salient words of the text.
//! - `keywords`: the profile's `Interests:` line.
//! - `rate`: item keywords overlapping the user's are High, disjoint ones
//!   Low, items without keywords Medium.
//! - `noise`: a Low candidate is noise unless it touches a latent interest.
//! - `collab`: keyword Jaccard at or above the threshold is an enhancement.
//! - `interests`: candidates overlapping the user's keywords or latent
//!   interests.

use std::collections::{BTreeMap, BTreeSet};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sha2::{Digest, Sha256};

use super::{PromptRequest, Provider};
use crate::error::{Error, Result};
use crate::prompts::{field, parse_candidate_line, section, split_list};

#[derive(Clone, Debug)]
pub struct MockRules {
    /// Keywords keyed by `user:<id>` or `item:<id>`.
    pub keywords: BTreeMap<String, Vec<String>>,
    /// Latent interests per user id; shield Low items from noise removal.
    pub latent: BTreeMap<String, Vec<String>>,
    pub collab_threshold: f64,
    pub embedding_dim: usize,
}

impl Default for MockRules {
    fn default() -> Self {
        Self {
            keywords: BTreeMap::new(),
            latent: BTreeMap::new(),
            collab_threshold: 0.5,
            embedding_dim: 64,
        }
    }
}

impl MockRules {
    pub fn with_user(mut self, id: &str, keywords: &[&str]) -> Self {
        self.keywords.insert(format!("user:{id}"), to_strings(keywords));
        self
    }

    pub fn with_item(mut self, id: &str, keywords: &[&str]) -> Self {
        self.keywords.insert(format!("item:{id}"), to_strings(keywords));
        self
    }

    pub fn with_latent(mut self, user: &str, keywords: &[&str]) -> Self {
        self.latent.insert(user.to_string(), to_strings(keywords));
        self
    }

    fn latent_of(&self, user: &str) -> BTreeSet<String> {
        self.latent.get(user).map(|v| lower_set(v)).unwrap_or_default()
    }
}

fn to_strings(v: &[&str]) -> Vec<String> {
    v.iter().map(|s| s.to_string()).collect()
}

fn lower_set(v: &[String]) -> BTreeSet<String> {
    v.iter().map(|s| s.trim().to_lowercase()).filter(|s| !s.is_empty()).collect()
}

pub fn jaccard(a: &BTreeSet<String>, b: &BTreeSet<String>) -> f64 {
    let union = a.union(b).count();
    if union == 0 {
        0.0
    } else {
        a.intersection(b).count() as f64 / union as f64
    }
}

#[derive(Clone, Debug, Default)]
pub struct MockProvider {
    rules: MockRules,
}

impl MockProvider {
    pub fn new(rules: MockRules) -> Self {
        Self { rules }
    }

    fn profile(&self, text: &str) -> Result<String> {
        let subject = field(text, "SUBJECT").ok_or_else(|| bad_prompt("SUBJECT"))?;
        let (kind, id) = subject.split_once(' ').ok_or_else(|| bad_prompt("SUBJECT"))?;
        let kws = match self.rules.keywords.get(&format!("{kind}:{id}")) {
            Some(k) => k.clone(),
            None => {
                let body = section(text, if kind == "user" { "HISTORY" } else { "DETAILS" }).join(" ");
                salient_words(&body, 5)
            }
        };
        let kws = if kws.is_empty() { vec!["general".to_string()] } else { kws };
        Ok(format!(
            "This {kind} ({id}) is characterised by {}.\nInterests: {}",
            kws.join(" and "),
            kws.join(", ")
        ))
    }

    fn keywords(&self, text: &str) -> Result<String> {
        let profile = section(text, "PROFILE").join("\n");
        let from_profile = field(&profile, "Interests").map(split_list);
        let kws = match from_profile {
            Some(k) if !k.is_empty() => k,
            _ => {
                let subject = field(text, "SUBJECT").unwrap_or_default().replacen(' ', ":", 1);
                self.rules.keywords.get(&subject).cloned().unwrap_or_else(|| salient_words(&profile, 5))
            }
        };
        Ok(format!("Keywords: {}", kws.join(", ")))
    }

    fn rate(&self, text: &str) -> Result<String> {
        let user_kws = lower_set(&split_list(field(text, "USER_KEYWORDS").unwrap_or_default()));
        let mut out = String::from("Reasoning: items sharing a keyword with the user's profile rate High.\n");
        for line in section(text, "ITEMS") {
            let (_, id, kws) = parse_candidate_line(line).ok_or_else(|| bad_prompt("ITEMS"))?;
            let kws = lower_set(&kws);
            let label = if kws.is_empty() {
                "Medium"
            } else if kws.intersection(&user_kws).next().is_some() {
                "High"
            } else {
                "Low"
            };
            out.push_str(&format!("{id}: {label}\n"));
        }
        Ok(out)
    }

    fn select(&self, text: &str, key: &str, keep: impl Fn(&BTreeSet<String>) -> bool) -> Result<String> {
        let chosen: Vec<String> = section(text, "CANDIDATES")
            .into_iter()
            .filter_map(parse_candidate_line)
            .filter(|(_, _, kws)| keep(&lower_set(kws)))
            .map(|(_, id, _)| id)
            .collect();
        let list = if chosen.is_empty() { "none".to_string() } else { chosen.join(", ") };
        Ok(format!("Reasoning: applied the {key} keyword rule to each candidate.\n{key}: {list}\n"))
    }
}

fn bad_prompt(block: &str) -> Error {
    Error::Config(format!("mock provider: prompt lacks a readable {block} block"))
}

/// Distinct lowercase words of 4+ letters, first occurrences.
fn salient_words(text: &str, limit: usize) -> Vec<String> {
    let mut seen = BTreeSet::new();
    text.split(|c: char| !c.is_alphanumeric())
        .map(str::to_lowercase)
        .filter(|w| w.chars().count() >= 4 && w.chars().all(char::is_alphabetic))
        .filter(|w| seen.insert(w.clone()))
        .take(limit)
        .collect()
}

fn hash_seed(parts: &[&str]) -> u64 {
    let mut hasher = Sha256::new();
    for p in parts {
        hasher.update(p.as_bytes());
        hasher.update([0u8]);
    }
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().unwrap())
}

fn seeded_vector(seed: u64, dim: usize) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect()
}

impl Provider for MockProvider {
    fn model(&self) -> &str {
        "mock-rules-v1"
    }

    fn embedding_dim(&self) -> usize {
        self.rules.embedding_dim
    }

    fn complete(&self, request: &PromptRequest) -> Result<String> {
        let text = &request.user_text;
        let task = field(text, "TASK").unwrap_or(request.tag.as_str());
        let user = field(text, "USER").unwrap_or_default().to_string();
        match task {
            "profile" => self.profile(text),
            "keywords" => self.keywords(text),
            "rate" => self.rate(text),
            "noise" => {
                let latent = self.rules.latent_of(&user);
                self.select(text, "NOISE", |kws| kws.is_disjoint(&latent))
            }
            "collab" => {
                let user_kws = lower_set(&split_list(field(text, "USER_KEYWORDS").unwrap_or_default()));
                let threshold = self.rules.collab_threshold;
                self.select(text, "ENHANCE", |kws| jaccard(&user_kws, kws) >= threshold)
            }
            "interests" => {
                let mut wanted = lower_set(&split_list(field(text, "USER_KEYWORDS").unwrap_or_default()));
                wanted.extend(self.rules.latent_of(&user));
                self.select(text, "INTERESTS", |kws| !kws.is_disjoint(&wanted))
            }
            other => Err(Error::Config(format!("mock provider: unknown task {other:?}"))),
        }
    }

    /// Unit vector: hashed bag of words plus a whole-text component, so
    /// texts sharing words point in similar directions while distinct texts
    /// never coincide.
    fn embed(&self, text: &str) -> Result<Vec<f64>> {
        let dim = self.rules.embedding_dim;
        let mut v = seeded_vector(hash_seed(&["text", text]), dim);
        for x in v.iter_mut() {
            *x *= 0.3;
        }
        for word in text
            .split(|c: char| !c.is_alphanumeric())
            .filter(|w| !w.is_empty())
            .map(str::to_lowercase)
        {
            for (acc, w) in v.iter_mut().zip(seeded_vector(hash_seed(&["word", &word]), dim)) {
                *acc += w;
            }
        }
        let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
        Ok(v.into_iter().map(|x| x / norm).collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::llm::LlmGateway;

    #[test]
    fn rate_rule_marks_off_profile_items_low() {
        let gw = LlmGateway::mock(MockRules::default());
        let req = PromptRequest::new(
            "rate these",
            "TASK: rate\nUSER: u1\nUSER_KEYWORDS: fantasy, epic\nITEMS:\nITEM i1 | fantasy\nITEM i2 | cooking\n",
            "rate",
        );
        let out = gw.complete(&req).unwrap();
        assert!(out.contains("i1: High"));
        assert!(out.contains("i2: Low"));
        assert_eq!(gw.complete(&req).unwrap(), out);
        assert_eq!(gw.stats().cache_hits, 1);
    }

    #[test]
    fn profile_uses_rule_keywords() {
        let p = MockProvider::new(MockRules::default().with_item("b1", &["fantasy"]));
        let out = p
            .complete(&PromptRequest::new("s", "TASK: profile\nSUBJECT: item b1\nDETAILS:\nDune\n", "profile"))
            .unwrap();
        assert!(out.contains("fantasy"));
    }

    #[test]
    fn embeddings_are_unit_and_distinct() {
        let p = MockProvider::new(MockRules::default());
        let a = p.embed("same text").unwrap();
        assert_eq!(a, p.embed("same text").unwrap());
        let norm: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert!((norm - 1.0).abs() < 1e-12);

        let corpus: Vec<Vec<f64>> = (0..100).map(|k| p.embed(&format!("document number {k} about topic {}", k % 7)).unwrap()).collect();
        for i in 0..corpus.len() {
            for j in i + 1..corpus.len() {
                let cos: f64 = corpus[i].iter().zip(&corpus[j]).map(|(x, y)| x * y).sum();
                assert!(cos < 0.999, "texts {i} and {j} cos {cos}");
            }
        }
    }

    #[test]
    fn jaccard_rule() {
        let a = lower_set(&to_strings(&["a", "b", "c", "d"]));
        let b = lower_set(&to_strings(&["a", "b", "c", "e"]));
        // |{a,b,c}| / |{a,b,c,d,e}| = 0.6
        assert!((jaccard(&a, &b) - 0.6).abs() < 1e-15);
    }
}
