//! Adversarial false-positive injection into the training split.

use std::collections::HashSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, Interaction};
use crate::error::{Error, Result};

/// Injected (user, item) pairs in draw order.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct NoiseLedger {
    pub pairs: Vec<(usize, usize)>,
}

impl NoiseLedger {
    pub fn contains(&self, user: usize, item: usize) -> bool {
        self.pairs.contains(&(user, item))
    }

    pub fn to_set(&self) -> HashSet<(usize, usize)> {
        self.pairs.iter().copied().collect()
    }

    pub fn to_text(&self) -> String {
        self.pairs.iter().map(|(u, i)| format!("{u}\t{i}\n")).collect()
    }

    pub fn from_text(text: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (idx, line) in text.lines().enumerate() {
            if line.trim().is_empty() {
                continue;
            }
            let mut it = line.split('\t');
            let parse = |s: Option<&str>| -> Result<usize> {
                s.and_then(|v| v.trim().parse().ok()).ok_or_else(|| Error::Malformed {
                    line: idx + 1,
                    message: "expected `u_index \\t i_index`".into(),
                })
            };
            pairs.push((parse(it.next())?, parse(it.next())?));
        }
        Ok(Self { pairs })
    }
}

/// Adds `floor(ratio * |train|)` uniformly drawn unobserved pairs to train.
pub fn inject_noise(dataset: &Dataset, ratio: f64, seed: u64) -> Result<(Dataset, NoiseLedger)> {
    if !(ratio > 0.0 && ratio <= 1.0) {
        return Err(Error::Config(format!("noise ratio {ratio} outside (0, 1]")));
    }
    let count = (ratio * dataset.train().len() as f64).floor() as usize;
    let (nu, ni) = (dataset.num_users(), dataset.num_items());
    let cells = nu * ni;
    let absent = cells - dataset.total_interactions();
    if count > absent {
        return Err(Error::Infeasible(format!(
            "{count} noise pairs requested but only {absent} unobserved pairs exist"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut chosen: HashSet<(usize, usize)> = HashSet::with_capacity(count);
    let mut pairs = Vec::with_capacity(count);
    if count * 2 <= absent {
        while pairs.len() < count {
            let u = rng.random_range(0..nu);
            let i = rng.random_range(0..ni);
            if !dataset.is_observed(u, i) && chosen.insert((u, i)) {
                pairs.push((u, i));
            }
        }
    } else {
        // Dense regime: partial Fisher-Yates over the explicit complement.
        let mut pool: Vec<(usize, usize)> = (0..nu)
            .flat_map(|u| (0..ni).map(move |i| (u, i)))
            .filter(|&(u, i)| !dataset.is_observed(u, i))
            .collect();
        for k in 0..count {
            let j = rng.random_range(k..pool.len());
            pool.swap(k, j);
            pairs.push(pool[k]);
        }
    }

    let mut train: Vec<Interaction> = dataset.train().to_vec();
    train.extend(pairs.iter().map(|&(u, i)| Interaction::new(u, i)));
    Ok((dataset.with_train(train)?, NoiseLedger { pairs }))
}
