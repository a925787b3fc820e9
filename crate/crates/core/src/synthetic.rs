//! Clustered implicit-feedback data with planted cross-cluster noise and a
//! mock knowledge oracle keyed to cluster keywords.

use std::collections::BTreeSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::{Dataset, Interaction, NoiseLedger, TextCatalog};
use crate::error::{Error, Result};
use crate::llm::{LlmGateway, MockRules};
use crate::preference::{build_preference_knowledge, PreferenceKnowledge, ProjectionHead, DEFAULT_MAX_KEYWORDS, DEFAULT_TEXT_BUDGET};
use crate::prompts::PromptSet;
use crate::relation::{build_relation_knowledge, RelationConfig, RelationContext, RelationKnowledge};

const TOPICS: [[&str; 2]; 8] = [
    ["astronomy", "telescopes"],
    ["baking", "pastry"],
    ["gardening", "orchids"],
    ["chess", "openings"],
    ["sailing", "navigation"],
    ["pottery", "glazes"],
    ["cycling", "touring"],
    ["beekeeping", "honey"],
];

#[derive(Clone, Debug, PartialEq)]
pub struct PlantedConfig {
    pub users: usize,
    pub items: usize,
    pub clusters: usize,
    /// Clean interactions drawn per user from its own cluster.
    pub per_user: usize,
    /// Injected cross-cluster training pairs as a fraction of clean train.
    pub noise_ratio: f64,
    /// Width of the circular preference kernel inside a cluster; users
    /// favour items near their latent position. `None` draws uniformly.
    pub locality: Option<f64>,
    pub seed: u64,
}

impl Default for PlantedConfig {
    fn default() -> Self {
        Self {
            users: 200,
            items: 200,
            clusters: 5,
            per_user: 15,
            noise_ratio: 0.2,
            locality: Some(0.1),
            seed: 7,
        }
    }
}

pub struct PlantedNoise {
    pub dataset: Dataset,
    /// Injected pairs; they occupy the last training slots.
    pub ledger: NoiseLedger,
    pub user_cluster: Vec<usize>,
    pub item_cluster: Vec<usize>,
    pub rules: MockRules,
}

fn topic(c: usize) -> [&'static str; 2] {
    TOPICS[c % TOPICS.len()]
}

/// Users and items are assigned round-robin to clusters. Each user's clean
/// interactions come from its cluster and are split 3:1:1; noise pairs join
/// a user to an item of another cluster and only enter train.
pub fn planted_noise(cfg: &PlantedConfig) -> Result<PlantedNoise> {
    let c = cfg.clusters;
    if c == 0 || c > TOPICS.len() || cfg.users < c || cfg.items < c {
        return Err(Error::Config(format!("unsupported planted layout: {cfg:?}")));
    }
    let per_cluster = cfg.items / c;
    if cfg.per_user < 5 || cfg.per_user > per_cluster {
        return Err(Error::Config(format!("per_user must lie in [5, {per_cluster}]")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let user_cluster: Vec<usize> = (0..cfg.users).map(|u| u % c).collect();
    let item_cluster: Vec<usize> = (0..cfg.items).map(|i| i % c).collect();
    let members: Vec<Vec<usize>> = (0..c).map(|k| (0..cfg.items).filter(|&i| item_cluster[i] == k).collect()).collect();

    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    let n_hold = cfg.per_user / 5;
    for u in 0..cfg.users {
        let pool = &members[user_cluster[u]];
        let picked = match cfg.locality {
            None => {
                let mut pool = pool.clone();
                pool.shuffle(&mut rng);
                pool.truncate(cfg.per_user);
                pool
            }
            Some(width) => {
                let centre: f64 = rng.random();
                let weight = |k: usize| {
                    let d = (k as f64 / pool.len() as f64 - centre).abs();
                    (-d.min(1.0 - d) / width).exp()
                };
                let mut picks = pool
                    .iter()
                    .enumerate()
                    .collect::<Vec<_>>()
                    .choose_multiple_weighted(&mut rng, cfg.per_user, |&(k, _)| weight(k))
                    .map_err(|e| Error::Config(format!("weighted draw: {e}")))?
                    .map(|&(_, &i)| i)
                    .collect::<Vec<_>>();
                picks.shuffle(&mut rng);
                picks
            }
        };
        let n_train = cfg.per_user - 2 * n_hold;
        train.extend(picked[..n_train].iter().map(|&i| Interaction::new(u, i)));
        val.extend(picked[n_train..n_train + n_hold].iter().map(|&i| Interaction::new(u, i)));
        test.extend(picked[n_train + n_hold..].iter().map(|&i| Interaction::new(u, i)));
    }
    let count = (cfg.noise_ratio * train.len() as f64).floor() as usize;
    let mut chosen = BTreeSet::new();
    let mut ledger = Vec::with_capacity(count);
    while ledger.len() < count {
        let u = rng.random_range(0..cfg.users);
        let i = rng.random_range(0..cfg.items);
        if item_cluster[i] != user_cluster[u] && chosen.insert((u, i)) {
            ledger.push((u, i));
        }
    }
    train.extend(ledger.iter().map(|&(u, i)| Interaction::new(u, i)));

    let mut catalog = TextCatalog::default();
    let mut rules = MockRules::default();
    for (i, &cluster) in item_cluster.iter().enumerate() {
        let [a, b] = topic(cluster);
        let id = format!("i{i:03}");
        let entry = catalog.items.entry(id.clone()).or_default();
        entry.title = format!("Volume {i} on {a}");
        entry.category = b.to_string();
        entry.description = format!("A practical guide to {a} and {b}.");
        rules = rules.with_item(&id, &[a, b]);
    }
    for (u, &cluster) in user_cluster.iter().enumerate() {
        let [a, b] = topic(cluster);
        rules = rules.with_user(&format!("u{u:03}"), &[a, b]);
    }
    let dataset = Dataset::new(
        (0..cfg.users).map(|u| format!("u{u:03}")).collect(),
        (0..cfg.items).map(|i| format!("i{i:03}")).collect(),
        train,
        val,
        test,
        catalog,
    )?;
    Ok(PlantedNoise {
        dataset,
        ledger: NoiseLedger { pairs: ledger },
        user_cluster,
        item_cluster,
        rules,
    })
}

impl PlantedNoise {
    /// Training-slot flags: true for injected pairs.
    pub fn noise_flags(&self) -> Vec<bool> {
        let set = self.ledger.to_set();
        self.dataset.train().iter().map(|x| set.contains(&x.pair())).collect()
    }

    /// K_p and K_r from the mock oracle, with a seeded build-time head.
    pub fn knowledge(&self, dim: usize, seed: u64) -> Result<(PreferenceKnowledge, RelationKnowledge)> {
        let gateway = LlmGateway::mock(self.rules.clone());
        let prompts = PromptSet::default();
        let head = ProjectionHead::new(gateway.embedding_dim(), dim, None, &mut ChaCha8Rng::seed_from_u64(seed));
        let kp = build_preference_knowledge(&gateway, &self.dataset, &prompts, &head, DEFAULT_TEXT_BUDGET, DEFAULT_MAX_KEYWORDS)?;
        let ctx = RelationContext {
            gateway: &gateway,
            prompts: &prompts,
            dataset: &self.dataset,
            knowledge: &kp,
            config: RelationConfig::default(),
        };
        let kr = build_relation_knowledge(&ctx, None)?;
        Ok((kp, kr))
    }
}

/// Probability that a random positive scores above a random negative, ties
/// counting one half.
pub fn auc(positive: &[f64], negative: &[f64]) -> f64 {
    if positive.is_empty() || negative.is_empty() {
        return 0.5;
    }
    let mut wins = 0.0;
    for &p in positive {
        for &n in negative {
            wins += if p > n {
                1.0
            } else if p == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (positive.len() * negative.len()) as f64
}
