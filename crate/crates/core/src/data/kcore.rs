//! Rating threshold plus iterative k-core peeling on the bipartite
//! user-item graph.

use std::collections::{HashMap, HashSet, VecDeque};

use super::records::InteractionRecord;

/// Drops records rated below `min_rating` (unrated records survive), then
/// peels users and items with fewer than `k` distinct partners until a
/// fixpoint. The surviving records keep their input order.
pub fn kcore_filter(
    records: &[InteractionRecord],
    k: usize,
    min_rating: Option<u8>,
) -> Vec<InteractionRecord> {
    assert!(k >= 1, "k must be positive");
    let kept: Vec<&InteractionRecord> = records
        .iter()
        .filter(|r| match (min_rating, r.rating) {
            (Some(min), Some(r)) => r >= min,
            _ => true,
        })
        .collect();

    // Distinct-partner adjacency over interned ids.
    let mut user_ids: HashMap<&str, usize> = HashMap::new();
    let mut item_ids: HashMap<&str, usize> = HashMap::new();
    let mut pairs: HashSet<(usize, usize)> = HashSet::new();
    for r in &kept {
        let n = user_ids.len();
        let u = *user_ids.entry(r.user_id.as_str()).or_insert(n);
        let n = item_ids.len();
        let i = *item_ids.entry(r.item_id.as_str()).or_insert(n);
        pairs.insert((u, i));
    }
    let mut user_adj = vec![Vec::new(); user_ids.len()];
    let mut item_adj = vec![Vec::new(); item_ids.len()];
    for &(u, i) in &pairs {
        user_adj[u].push(i);
        item_adj[i].push(u);
    }
    let mut user_deg: Vec<usize> = user_adj.iter().map(Vec::len).collect();
    let mut item_deg: Vec<usize> = item_adj.iter().map(Vec::len).collect();
    let mut user_alive = vec![true; user_adj.len()];
    let mut item_alive = vec![true; item_adj.len()];

    // Queue of (is_user, index) awaiting removal.
    let mut queue: VecDeque<(bool, usize)> = VecDeque::new();
    for (u, &d) in user_deg.iter().enumerate() {
        if d < k {
            user_alive[u] = false;
            queue.push_back((true, u));
        }
    }
    for (i, &d) in item_deg.iter().enumerate() {
        if d < k {
            item_alive[i] = false;
            queue.push_back((false, i));
        }
    }
    while let Some((is_user, node)) = queue.pop_front() {
        if is_user {
            for &i in &user_adj[node] {
                if item_alive[i] {
                    item_deg[i] -= 1;
                    if item_deg[i] < k {
                        item_alive[i] = false;
                        queue.push_back((false, i));
                    }
                }
            }
        } else {
            for &u in &item_adj[node] {
                if user_alive[u] {
                    user_deg[u] -= 1;
                    if user_deg[u] < k {
                        user_alive[u] = false;
                        queue.push_back((true, u));
                    }
                }
            }
        }
    }

    kept.into_iter()
        .filter(|r| user_alive[user_ids[r.user_id.as_str()]] && item_alive[item_ids[r.item_id.as_str()]])
        .cloned()
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(u: &str, i: &str) -> InteractionRecord {
        InteractionRecord::new(u, i)
    }

    /// Repeatedly deletes any record touching a low-degree endpoint.
    fn brute_force(records: &[InteractionRecord], k: usize) -> Vec<InteractionRecord> {
        let mut cur: Vec<InteractionRecord> = records.to_vec();
        loop {
            let mut users: HashMap<&str, HashSet<&str>> = HashMap::new();
            let mut items: HashMap<&str, HashSet<&str>> = HashMap::new();
            for r in &cur {
                users.entry(&r.user_id).or_default().insert(&r.item_id);
                items.entry(&r.item_id).or_default().insert(&r.user_id);
            }
            let next: Vec<InteractionRecord> = cur
                .iter()
                .filter(|r| users[r.user_id.as_str()].len() >= k && items[r.item_id.as_str()].len() >= k)
                .cloned()
                .collect();
            if next.len() == cur.len() {
                return next;
            }
            cur = next;
        }
    }

    #[test]
    fn small_instance_matches_brute_force() {
        let recs = vec![rec("u1", "i1"), rec("u1", "i2"), rec("u1", "i3"), rec("u2", "i1")];
        let expected = brute_force(&recs, 2);
        // u2 falls, then i1..i3 all sit at degree 1 and u1 empties out.
        assert!(expected.is_empty());
        assert_eq!(kcore_filter(&recs, 2, None), expected);
    }

    #[test]
    fn k_one_without_ratings_is_identity() {
        let recs = vec![rec("a", "x"), rec("b", "x"), rec("b", "y"), rec("a", "x")];
        assert_eq!(kcore_filter(&recs, 1, None), recs);
    }

    #[test]
    fn rating_filter_runs_first() {
        let recs: Vec<_> = (0..4).map(|n| rec(&format!("u{n}"), "i").with_rating(2)).collect();
        assert!(kcore_filter(&recs, 1, Some(3)).is_empty());
        let mixed = vec![rec("u", "i").with_rating(2), rec("u", "j"), rec("v", "j").with_rating(4)];
        let out = kcore_filter(&mixed, 1, Some(3));
        assert_eq!(out, vec![rec("u", "j"), rec("v", "j").with_rating(4)]);
    }

    fn arb_records() -> impl Strategy<Value = Vec<InteractionRecord>> {
        prop::collection::vec((0u8..8, 0u8..8), 0..40).prop_map(|pairs| {
            pairs
                .into_iter()
                .map(|(u, i)| rec(&format!("u{u}"), &format!("i{i}")))
                .collect()
        })
    }

    proptest! {
        #[test]
        fn matches_brute_force_and_is_idempotent(recs in arb_records(), k in 1usize..4) {
            let once = kcore_filter(&recs, k, None);
            prop_assert_eq!(&once, &brute_force(&recs, k));
            prop_assert_eq!(kcore_filter(&once, k, None), once);
        }
    }
}
