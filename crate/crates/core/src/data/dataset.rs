use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::records::{InteractionRecord, TextCatalog};
use crate::error::{Error, Result};

/// One indexed (user, item) pair.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct Interaction {
    pub user: usize,
    pub item: usize,
    pub timestamp: Option<i64>,
}

impl Interaction {
    pub fn new(user: usize, item: usize) -> Self {
        Self {
            user,
            item,
            timestamp: None,
        }
    }

    pub fn pair(&self) -> (usize, usize) {
        (self.user, self.item)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SplitRatios {
    pub train: u32,
    pub val: u32,
    pub test: u32,
}

impl Default for SplitRatios {
    fn default() -> Self {
        Self {
            train: 3,
            val: 1,
            test: 1,
        }
    }
}

impl SplitRatios {
    /// (train, val, test) counts for a user with `n` interactions. Val and
    /// test are rounded; train takes the remainder and keeps at least one.
    pub fn counts(&self, n: usize) -> (usize, usize, usize) {
        let total = (self.train + self.val + self.test) as f64;
        let mut val = (n as f64 * self.val as f64 / total).round() as usize;
        let mut test = (n as f64 * self.test as f64 / total).round() as usize;
        while n > 0 && val + test >= n {
            if test >= val && test > 0 {
                test -= 1;
            } else {
                val -= 1;
            }
        }
        (n - val - test, val, test)
    }
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    format: u32,
    users: Vec<String>,
    items: Vec<String>,
    train: Vec<Interaction>,
    val: Vec<Interaction>,
    test: Vec<Interaction>,
    catalog: TextCatalog,
}

/// Indexed, split interaction data. Immutable once built.
#[derive(Clone, Debug)]
pub struct Dataset {
    users: Vec<String>,
    items: Vec<String>,
    train: Vec<Interaction>,
    val: Vec<Interaction>,
    test: Vec<Interaction>,
    catalog: TextCatalog,
    user_lookup: HashMap<String, usize>,
    item_lookup: HashMap<String, usize>,
    train_pos: Vec<Vec<usize>>,
    val_pos: Vec<Vec<usize>>,
    test_pos: Vec<Vec<usize>>,
    item_users: Vec<Vec<usize>>,
}

impl Dataset {
    pub fn new(
        users: Vec<String>,
        items: Vec<String>,
        mut train: Vec<Interaction>,
        mut val: Vec<Interaction>,
        mut test: Vec<Interaction>,
        catalog: TextCatalog,
    ) -> Result<Self> {
        let (nu, ni) = (users.len(), items.len());
        let mut seen: HashSet<(usize, usize)> = HashSet::new();
        for split in [&train, &val, &test] {
            for x in split.iter() {
                if x.user >= nu {
                    return Err(Error::IndexBounds {
                        what: "user",
                        index: x.user,
                        limit: nu,
                    });
                }
                if x.item >= ni {
                    return Err(Error::IndexBounds {
                        what: "item",
                        index: x.item,
                        limit: ni,
                    });
                }
                if !seen.insert(x.pair()) {
                    return Err(Error::Validation(format!(
                        "pair ({}, {}) appears more than once across splits",
                        x.user, x.item
                    )));
                }
            }
        }
        train.sort();
        val.sort();
        test.sort();
        let positives = |split: &[Interaction]| {
            let mut out = vec![Vec::new(); nu];
            for x in split {
                out[x.user].push(x.item);
            }
            for list in out.iter_mut() {
                list.sort_unstable();
            }
            out
        };
        let train_pos = positives(&train);
        let val_pos = positives(&val);
        let test_pos = positives(&test);
        let mut item_users = vec![Vec::new(); ni];
        for x in &train {
            item_users[x.item].push(x.user);
        }
        let user_lookup = users.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        let item_lookup = items.iter().enumerate().map(|(i, s)| (s.clone(), i)).collect();
        Ok(Self {
            users,
            items,
            train,
            val,
            test,
            catalog,
            user_lookup,
            item_lookup,
            train_pos,
            val_pos,
            test_pos,
            item_users,
        })
    }

    pub fn num_users(&self) -> usize {
        self.users.len()
    }

    pub fn num_items(&self) -> usize {
        self.items.len()
    }

    pub fn user_id(&self, user: usize) -> &str {
        &self.users[user]
    }

    pub fn item_id(&self, item: usize) -> &str {
        &self.items[item]
    }

    pub fn user_ids(&self) -> &[String] {
        &self.users
    }

    pub fn item_ids(&self) -> &[String] {
        &self.items
    }

    pub fn user_index(&self, id: &str) -> Option<usize> {
        self.user_lookup.get(id).copied()
    }

    pub fn item_index(&self, id: &str) -> Option<usize> {
        self.item_lookup.get(id).copied()
    }

    pub fn catalog(&self) -> &TextCatalog {
        &self.catalog
    }

    pub fn train(&self) -> &[Interaction] {
        &self.train
    }

    pub fn val(&self) -> &[Interaction] {
        &self.val
    }

    pub fn test(&self) -> &[Interaction] {
        &self.test
    }

    pub fn split(&self, split: Split) -> &[Interaction] {
        match split {
            Split::Train => &self.train,
            Split::Val => &self.val,
            Split::Test => &self.test,
        }
    }

    /// Sorted item indices of `user` in `split`.
    pub fn positives(&self, split: Split, user: usize) -> &[usize] {
        match split {
            Split::Train => &self.train_pos[user],
            Split::Val => &self.val_pos[user],
            Split::Test => &self.test_pos[user],
        }
    }

    pub fn is_train_positive(&self, user: usize, item: usize) -> bool {
        self.train_pos[user].binary_search(&item).is_ok()
    }

    pub fn is_observed(&self, user: usize, item: usize) -> bool {
        [&self.train_pos, &self.val_pos, &self.test_pos]
            .iter()
            .any(|p| p[user].binary_search(&item).is_ok())
    }

    /// Users with a training interaction on `item`, ascending.
    pub fn item_train_users(&self, item: usize) -> &[usize] {
        &self.item_users[item]
    }

    /// The user's training interactions, oldest first; missing timestamps
    /// sort before any dated interaction, ties by item index.
    pub fn train_history(&self, user: usize) -> Vec<Interaction> {
        let mut out: Vec<Interaction> = self.train.iter().filter(|x| x.user == user).copied().collect();
        out.sort_by_key(|x| (x.timestamp, x.item));
        out
    }

    pub fn total_interactions(&self) -> usize {
        self.train.len() + self.val.len() + self.test.len()
    }

    pub fn density(&self) -> f64 {
        let cells = (self.num_users() * self.num_items()) as f64;
        if cells == 0.0 {
            0.0
        } else {
            self.total_interactions() as f64 / cells
        }
    }

    /// Same indices and catalog with a replacement training split.
    pub fn with_train(&self, train: Vec<Interaction>) -> Result<Self> {
        Dataset::new(
            self.users.clone(),
            self.items.clone(),
            train,
            self.val.clone(),
            self.test.clone(),
            self.catalog.clone(),
        )
    }

    pub fn to_json(&self) -> String {
        let file = DatasetFile {
            format: 1,
            users: self.users.clone(),
            items: self.items.clone(),
            train: self.train.clone(),
            val: self.val.clone(),
            test: self.test.clone(),
            catalog: self.catalog.clone(),
        };
        serde_json::to_string(&file).expect("dataset serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let file: DatasetFile = serde_json::from_str(text)?;
        if file.format != 1 {
            return Err(Error::Artifact(format!("unsupported dataset format {}", file.format)));
        }
        Dataset::new(file.users, file.items, file.train, file.val, file.test, file.catalog)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json())?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        Dataset::from_json(&std::fs::read_to_string(path)?)
    }
}

/// Indexes records (ids sorted lexicographically), collapses duplicate pairs
/// to their latest timestamp, and partitions each user's interactions at
/// random into train/val/test.
pub fn split_dataset(
    records: &[InteractionRecord],
    ratios: SplitRatios,
    seed: u64,
    catalog: TextCatalog,
) -> Result<Dataset> {
    let users: Vec<String> = records
        .iter()
        .map(|r| r.user_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let items: Vec<String> = records
        .iter()
        .map(|r| r.item_id.clone())
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let user_lookup: HashMap<&str, usize> = users.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();
    let item_lookup: HashMap<&str, usize> = items.iter().enumerate().map(|(i, s)| (s.as_str(), i)).collect();

    let mut pairs: BTreeMap<(usize, usize), Option<i64>> = BTreeMap::new();
    for r in records {
        let key = (user_lookup[r.user_id.as_str()], item_lookup[r.item_id.as_str()]);
        let slot = pairs.entry(key).or_insert(r.timestamp);
        *slot = (*slot).max(r.timestamp);
    }
    let mut per_user: Vec<Vec<Interaction>> = vec![Vec::new(); users.len()];
    for (&(user, item), &timestamp) in &pairs {
        per_user[user].push(Interaction {
            user,
            item,
            timestamp,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (mut train, mut val, mut test) = (Vec::new(), Vec::new(), Vec::new());
    for mut list in per_user {
        list.shuffle(&mut rng);
        let (_, n_val, n_test) = ratios.counts(list.len());
        let rest = list.split_off(n_test);
        test.extend(list);
        let mut rest = rest;
        let tail = rest.split_off(n_val);
        val.extend(rest);
        train.extend(tail);
    }
    Dataset::new(users, items, train, val, test, catalog)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn records_for(user: &str, n: usize) -> Vec<InteractionRecord> {
        (0..n)
            .map(|i| InteractionRecord::new(user, format!("item{i:02}")).with_timestamp(i as i64))
            .collect()
    }

    #[test]
    fn ratio_counts() {
        let r = SplitRatios::default();
        assert_eq!(r.counts(5), (3, 1, 1));
        assert_eq!(r.counts(1), (1, 0, 0));
        assert_eq!(r.counts(2), (2, 0, 0));
        assert_eq!(r.counts(3), (1, 1, 1));
        assert_eq!(r.counts(10), (6, 2, 2));
        for n in 1..200 {
            let (a, b, c) = r.counts(n);
            assert!(a >= 1);
            assert_eq!(a + b + c, n);
        }
    }

    #[test]
    fn split_partitions_each_user() {
        let mut recs = records_for("alice", 5);
        recs.extend(records_for("bob", 1));
        let ds = split_dataset(&recs, SplitRatios::default(), 7, TextCatalog::default()).unwrap();
        let alice = ds.user_index("alice").unwrap();
        let bob = ds.user_index("bob").unwrap();
        assert_eq!(ds.positives(Split::Train, alice).len(), 3);
        assert_eq!(ds.positives(Split::Val, alice).len(), 1);
        assert_eq!(ds.positives(Split::Test, alice).len(), 1);
        assert_eq!(ds.positives(Split::Train, bob).len(), 1);
        assert!(ds.positives(Split::Val, bob).is_empty());
        assert_eq!(ds.total_interactions(), 6);
    }

    #[test]
    fn split_is_deterministic() {
        let mut recs = Vec::new();
        for u in 0..20 {
            recs.extend(records_for(&format!("u{u}"), 3 + u % 7));
        }
        let a = split_dataset(&recs, SplitRatios::default(), 11, TextCatalog::default()).unwrap();
        let b = split_dataset(&recs, SplitRatios::default(), 11, TextCatalog::default()).unwrap();
        assert_eq!(a.to_json(), b.to_json());
        let c = split_dataset(&recs, SplitRatios::default(), 12, TextCatalog::default()).unwrap();
        assert_ne!(a.to_json(), c.to_json());
    }

    #[test]
    fn duplicate_records_collapse() {
        let recs = vec![
            InteractionRecord::new("u", "i").with_timestamp(3),
            InteractionRecord::new("u", "i").with_timestamp(9),
        ];
        let ds = split_dataset(&recs, SplitRatios::default(), 0, TextCatalog::default()).unwrap();
        assert_eq!(ds.train().len(), 1);
        assert_eq!(ds.train()[0].timestamp, Some(9));
    }

    #[test]
    fn rejects_overlapping_splits() {
        let x = Interaction::new(0, 0);
        let err = Dataset::new(
            vec!["u".into()],
            vec!["i".into()],
            vec![x],
            vec![x],
            vec![],
            TextCatalog::default(),
        );
        assert!(matches!(err, Err(Error::Validation(_))));
    }

    #[test]
    fn json_round_trip() {
        let ds = split_dataset(&records_for("u", 7), SplitRatios::default(), 1, TextCatalog::default()).unwrap();
        let back = Dataset::from_json(&ds.to_json()).unwrap();
        assert_eq!(back.to_json(), ds.to_json());
    }
}
