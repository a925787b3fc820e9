use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::{Dataset, Split};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Triple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
    /// Index of (user, pos) in `Dataset::train()`.
    pub edge: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct TripleBatch {
    pub triples: Vec<Triple>,
}

impl TripleBatch {
    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    /// Distinct users in first-appearance order.
    pub fn users(&self) -> Vec<usize> {
        distinct(self.triples.iter().map(|t| t.user))
    }

    /// Distinct positive and negative items in first-appearance order.
    pub fn items(&self) -> Vec<usize> {
        distinct(self.triples.iter().flat_map(|t| [t.pos, t.neg]))
    }
}

fn distinct(it: impl Iterator<Item = usize>) -> Vec<usize> {
    let mut seen = std::collections::HashSet::new();
    it.filter(|x| seen.insert(*x)).collect()
}

/// Draws `batch_size` triples: a uniform training pair (u, i) and a
/// uniform item j outside u's training positives. Pairs from users whose
/// positives cover the whole catalog are redrawn.
pub fn sample_triples<R: Rng>(dataset: &Dataset, batch_size: usize, rng: &mut R) -> Result<TripleBatch> {
    let train = dataset.train();
    if train.is_empty() {
        return Err(Error::Validation("empty training split".into()));
    }
    let ni = dataset.num_items();
    let saturated = |u: usize| dataset.positives(Split::Train, u).len() >= ni;
    if train.iter().all(|x| saturated(x.user)) {
        return Err(Error::Saturated);
    }
    let mut triples = Vec::with_capacity(batch_size);
    while triples.len() < batch_size {
        let edge = rng.random_range(0..train.len());
        let x = train[edge];
        let positives = dataset.positives(Split::Train, x.user);
        if positives.len() >= ni {
            continue;
        }
        let neg = if positives.len() * 2 <= ni {
            loop {
                let j = rng.random_range(0..ni);
                if positives.binary_search(&j).is_err() {
                    break j;
                }
            }
        } else {
            // k-th free item, skipping the sorted positives.
            let mut k = rng.random_range(0..ni - positives.len());
            let mut j = 0;
            for &p in positives {
                if p <= k + j {
                    j += 1;
                } else {
                    break;
                }
            }
            k += j;
            k
        };
        triples.push(Triple {
            user: x.user,
            pos: x.item,
            neg,
            edge,
        });
    }
    Ok(TripleBatch { triples })
}

pub fn sample_triples_seeded(dataset: &Dataset, batch_size: usize, seed: u64) -> Result<TripleBatch> {
    sample_triples(dataset, batch_size, &mut ChaCha8Rng::seed_from_u64(seed))
}
