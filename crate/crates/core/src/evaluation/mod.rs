//! Full-rank Recall@N / NDCG@N, robustness sweeps and cold-start groups.

use std::cmp::Ordering;
use std::fmt::Write as _;

use ndarray::{ArrayView1, ArrayView2};

use crate::data::{inject_noise, Dataset, Split};
use crate::error::{Error, Result};
use crate::model::score_all;

pub const DEFAULT_NS: [usize; 2] = [10, 20];
pub const DEFAULT_NOISE_RATIOS: [f64; 4] = [0.05, 0.10, 0.15, 0.20];
pub const COLDSTART_GROUPS: usize = 5;

#[derive(Clone, Debug, PartialEq)]
pub struct EvalOptions {
    pub ns: Vec<usize>,
    /// Keep validation positives in the test-time candidate pool.
    pub include_val_candidates: bool,
    pub seed: u64,
    pub config_hash: String,
}

impl Default for EvalOptions {
    fn default() -> Self {
        Self {
            ns: DEFAULT_NS.to_vec(),
            include_val_candidates: false,
            seed: 0,
            config_hash: String::new(),
        }
    }
}

/// Whether `item` is excluded from `user`'s candidates when ranking for
/// `split`: train positives always, validation positives at test time.
pub fn is_excluded(dataset: &Dataset, user: usize, item: usize, split: Split, include_val: bool) -> bool {
    let in_split = |s: Split| dataset.positives(s, user).binary_search(&item).is_ok();
    in_split(Split::Train) || (split == Split::Test && !include_val && in_split(Split::Val))
}

fn by_score<'a>(scores: &'a ArrayView1<f64>) -> impl Fn(&usize, &usize) -> Ordering + 'a {
    move |&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b))
}

fn candidates(scores: ArrayView1<f64>, dataset: &Dataset, user: usize, split: Split, include_val: bool) -> Vec<usize> {
    (0..scores.len())
        .filter(|&i| !is_excluded(dataset, user, i, split, include_val))
        .collect()
}

/// Every candidate item by descending score, ties by ascending index.
pub fn rank_candidates(scores: ArrayView1<f64>, dataset: &Dataset, user: usize, split: Split, include_val: bool) -> Vec<usize> {
    let mut items = candidates(scores, dataset, user, split, include_val);
    items.sort_by(by_score(&scores));
    items
}

/// The first `k` entries of [`rank_candidates`] without a full sort.
pub fn top_candidates(
    scores: ArrayView1<f64>,
    dataset: &Dataset,
    user: usize,
    split: Split,
    include_val: bool,
    k: usize,
) -> Vec<usize> {
    let mut items = candidates(scores, dataset, user, split, include_val);
    let cmp = by_score(&scores);
    if k < items.len() {
        items.select_nth_unstable_by(k, &cmp);
        items.truncate(k);
    }
    items.sort_by(cmp);
    items
}

fn discount(rank: usize) -> f64 {
    1.0 / ((rank + 1) as f64).log2()
}

/// Recall and binary-gain NDCG of the top `n` of `ranked`. `None` for an
/// empty test set.
pub fn topn_metrics(ranked: &[usize], test_items: &[usize], n: usize) -> Option<(f64, f64)> {
    if test_items.is_empty() {
        return None;
    }
    let mut hits = 0usize;
    let mut dcg = 0.0;
    for (r, item) in ranked.iter().take(n).enumerate() {
        if test_items.contains(item) {
            hits += 1;
            dcg += discount(r + 1);
        }
    }
    let idcg: f64 = (1..=n.min(test_items.len())).map(discount).sum();
    Some((hits as f64 / test_items.len() as f64, dcg / idcg))
}

#[derive(Clone, Debug, PartialEq)]
pub struct UserMetrics {
    pub user: usize,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq)]
pub struct MetricReport {
    pub ns: Vec<usize>,
    pub recall: Vec<f64>,
    pub ndcg: Vec<f64>,
    pub users: Vec<UserMetrics>,
    pub seed: u64,
    pub config_hash: String,
}

impl MetricReport {
    fn slot(&self, n: usize) -> Option<usize> {
        self.ns.iter().position(|&x| x == n)
    }

    pub fn recall_at(&self, n: usize) -> Option<f64> {
        self.slot(n).map(|k| self.recall[k])
    }

    pub fn ndcg_at(&self, n: usize) -> Option<f64> {
        self.slot(n).map(|k| self.ndcg[k])
    }

    /// Means over the given per-user rows.
    pub fn from_users(ns: Vec<usize>, users: Vec<UserMetrics>, seed: u64, config_hash: String) -> Self {
        let mean = |pick: &dyn Fn(&UserMetrics) -> f64| {
            if users.is_empty() {
                0.0
            } else {
                users.iter().map(pick).sum::<f64>() / users.len() as f64
            }
        };
        let recall = (0..ns.len()).map(|k| mean(&|u| u.recall[k])).collect();
        let ndcg = (0..ns.len()).map(|k| mean(&|u| u.ndcg[k])).collect();
        Self {
            ns,
            recall,
            ndcg,
            users,
            seed,
            config_hash,
        }
    }

    /// `metric \t N \t value` rows after two metadata comments.
    pub fn to_table(&self) -> String {
        let mut out = format!("# seed\t{}\n# config\t{}\n# users\t{}\nmetric\tN\tvalue\n", self.seed, self.config_hash, self.users.len());
        for (k, n) in self.ns.iter().enumerate() {
            writeln!(out, "recall\t{n}\t{:.6}", self.recall[k]).unwrap();
        }
        for (k, n) in self.ns.iter().enumerate() {
            writeln!(out, "ndcg\t{n}\t{:.6}", self.ndcg[k]).unwrap();
        }
        out
    }
}

/// Per-user metrics from unified-index representations `h`, scoring by
/// inner product. Users without `split` positives are left out.
pub fn evaluate_users(h: ArrayView2<f64>, dataset: &Dataset, split: Split, users: &[usize], opts: &EvalOptions) -> Vec<UserMetrics> {
    let nu = dataset.num_users();
    let depth = opts.ns.iter().copied().max().unwrap_or(0);
    users
        .iter()
        .filter(|&&u| !dataset.positives(split, u).is_empty())
        .map(|&u| {
            let scores = score_all(h, nu, u);
            let top = top_candidates(scores.view(), dataset, u, split, opts.include_val_candidates, depth);
            let test = dataset.positives(split, u);
            let (recall, ndcg) = opts
                .ns
                .iter()
                .map(|&n| topn_metrics(&top, test, n).expect("non-empty"))
                .unzip();
            UserMetrics { user: u, recall, ndcg }
        })
        .collect()
}

pub fn evaluate(h: ArrayView2<f64>, dataset: &Dataset, split: Split, opts: &EvalOptions) -> Result<MetricReport> {
    if opts.ns.is_empty() || opts.ns.contains(&0) {
        return Err(Error::Config("metric cutoffs must be at least 1".into()));
    }
    let all: Vec<usize> = (0..dataset.num_users()).collect();
    let users = evaluate_users(h, dataset, split, &all, opts);
    Ok(MetricReport::from_users(opts.ns.clone(), users, opts.seed, opts.config_hash.clone()))
}

/// `(clean − noisy) / clean`; zero when the clean metric is zero.
pub fn drop_rate(clean: f64, noisy: f64) -> f64 {
    if clean == 0.0 {
        0.0
    } else {
        (clean - noisy) / clean
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessRow {
    pub ratio: f64,
    pub recall: f64,
    pub ndcg: f64,
    pub drop_rate: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct RobustnessTable {
    pub n: usize,
    pub clean_recall: f64,
    pub rows: Vec<RobustnessRow>,
}

impl RobustnessTable {
    pub fn to_table(&self) -> String {
        let mut out = format!("ratio\trecall@{0}\tndcg@{0}\tdrop_rate\n", self.n);
        for r in &self.rows {
            writeln!(out, "{:.2}\t{:.6}\t{:.6}\t{:.6}", r.ratio, r.recall, r.ndcg, r.drop_rate).unwrap();
        }
        out
    }

    /// `ratio \t drop_rate` series.
    pub fn drop_series(&self) -> String {
        series(self.rows.iter().map(|r| (r.ratio, r.drop_rate)))
    }
}

/// Runs `run` (fit then test-evaluate) on the clean dataset and on a noisy
/// copy per ratio. A ratio of zero reuses the clean run.
pub fn robustness_sweep<F>(dataset: &Dataset, ratios: &[f64], n: usize, seed: u64, mut run: F) -> Result<RobustnessTable>
where
    F: FnMut(&Dataset) -> Result<MetricReport>,
{
    let metric = |r: &MetricReport| -> Result<(f64, f64)> {
        match (r.recall_at(n), r.ndcg_at(n)) {
            (Some(a), Some(b)) => Ok((a, b)),
            _ => Err(Error::Config(format!("report lacks cutoff {n}"))),
        }
    };
    let (clean_recall, clean_ndcg) = metric(&run(dataset)?)?;
    let mut rows = Vec::with_capacity(ratios.len());
    for &ratio in ratios {
        let (recall, ndcg) = if ratio == 0.0 {
            (clean_recall, clean_ndcg)
        } else {
            let (noisy, _) = inject_noise(dataset, ratio, seed)?;
            metric(&run(&noisy)?)?
        };
        rows.push(RobustnessRow {
            ratio,
            recall,
            ndcg,
            drop_rate: if ratio == 0.0 { 0.0 } else { drop_rate(clean_recall, recall) },
        });
    }
    Ok(RobustnessTable { n, clean_recall, rows })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ColdStartGroup {
    pub group: usize,
    pub users: Vec<usize>,
    pub min_freq: usize,
    pub median_freq: f64,
    pub max_freq: usize,
    pub report: MetricReport,
}

/// Evaluated users ordered by training-interaction count (ties by index)
/// and cut into equal-size quantile groups, sparsest first.
pub fn frequency_groups(dataset: &Dataset, users: &[usize], groups: usize) -> Result<Vec<Vec<usize>>> {
    if users.len() < groups {
        return Err(Error::Validation(format!("{} users cannot form {groups} groups", users.len())));
    }
    let freq = |u: usize| dataset.positives(Split::Train, u).len();
    let mut sorted = users.to_vec();
    sorted.sort_by_key(|&u| (freq(u), u));
    let n = sorted.len();
    Ok((0..groups).map(|g| sorted[g * n / groups..(g + 1) * n / groups].to_vec()).collect())
}

fn median(sorted: &[usize]) -> f64 {
    let n = sorted.len();
    if n % 2 == 1 {
        sorted[n / 2] as f64
    } else {
        (sorted[n / 2 - 1] + sorted[n / 2]) as f64 / 2.0
    }
}

pub fn coldstart_report(h: ArrayView2<f64>, dataset: &Dataset, opts: &EvalOptions) -> Result<Vec<ColdStartGroup>> {
    let evaluated: Vec<usize> = (0..dataset.num_users())
        .filter(|&u| !dataset.positives(Split::Test, u).is_empty())
        .collect();
    let groups = frequency_groups(dataset, &evaluated, COLDSTART_GROUPS)?;
    Ok(groups
        .into_iter()
        .enumerate()
        .map(|(g, users)| {
            let mut freqs: Vec<usize> = users.iter().map(|&u| dataset.positives(Split::Train, u).len()).collect();
            freqs.sort_unstable();
            let rows = evaluate_users(h, dataset, Split::Test, &users, opts);
            ColdStartGroup {
                group: g,
                min_freq: freqs[0],
                median_freq: median(&freqs),
                max_freq: freqs[freqs.len() - 1],
                users,
                report: MetricReport::from_users(opts.ns.clone(), rows, opts.seed, opts.config_hash.clone()),
            }
        })
        .collect())
}

/// One row per group: sizes, frequency range and every metric.
pub fn coldstart_table(groups: &[ColdStartGroup]) -> String {
    let ns = groups.first().map(|g| g.report.ns.clone()).unwrap_or_default();
    let mut out = String::from("group\tusers\tmin_freq\tmedian_freq\tmax_freq");
    for n in &ns {
        write!(out, "\trecall@{n}").unwrap();
    }
    for n in &ns {
        write!(out, "\tndcg@{n}").unwrap();
    }
    out.push('\n');
    for g in groups {
        write!(out, "{}\t{}\t{}\t{:.1}\t{}", g.group, g.users.len(), g.min_freq, g.median_freq, g.max_freq).unwrap();
        for v in g.report.recall.iter().chain(&g.report.ndcg) {
            write!(out, "\t{v:.6}").unwrap();
        }
        out.push('\n');
    }
    out
}

/// `x \t y` lines for external plotting.
pub fn series(points: impl IntoIterator<Item = (f64, f64)>) -> String {
    points.into_iter().map(|(x, y)| format!("{x}\t{y}\n")).collect()
}
