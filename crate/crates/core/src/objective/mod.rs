//! Loss terms of the training objective and their gradients with respect
//! to the representations they consume. The full parameter backward pass
//! lives in [`step`].

pub mod step;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};

use crate::data::Triple;
use crate::error::{Error, Result};

pub use step::{forward_backward, Bandwidths, StepConfig, StepOutcome, Views};

/// `ln(1 + e^x)` without overflow.
pub fn softplus(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn sigmoid(x: f64) -> f64 {
    crate::model::sigmoid(x)
}

/// Which terms are dropped.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct Ablation {
    /// β = 0: no compression term.
    pub no_mi_min: bool,
    /// α = 0: neither alignment term.
    pub no_mi_max: bool,
    /// No preference-knowledge alignment.
    pub no_pk: bool,
    /// No relation-knowledge alignment.
    pub no_rk: bool,
}

impl Ablation {
    pub fn all() -> Self {
        Self {
            no_mi_min: true,
            no_mi_max: true,
            no_pk: true,
            no_rk: true,
        }
    }

    pub fn uses_prf(&self) -> bool {
        !self.no_mi_max && !self.no_pk
    }

    pub fn uses_rel(&self) -> bool {
        !self.no_mi_max && !self.no_rk
    }

    pub fn uses_comp(&self) -> bool {
        !self.no_mi_min
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LossBreakdown {
    pub l_rec: f64,
    pub l_prf: f64,
    pub l_rel: f64,
    pub l_comp: f64,
    pub total: f64,
}

impl LossBreakdown {
    pub fn zero() -> Self {
        Self {
            l_rec: 0.0,
            l_prf: 0.0,
            l_rel: 0.0,
            l_comp: 0.0,
            total: 0.0,
        }
    }

    pub fn components(&self) -> [(&'static str, f64); 5] {
        [
            ("l_rec", self.l_rec),
            ("l_prf", self.l_prf),
            ("l_rel", self.l_rel),
            ("l_comp", self.l_comp),
            ("total", self.total),
        ]
    }

    /// First non-finite component, if any.
    pub fn non_finite(&self) -> Option<&'static str> {
        self.components().into_iter().find(|(_, v)| !v.is_finite()).map(|(n, _)| n)
    }
}

/// `l_rec + α (l_prf + l_rel) + β l_comp`, with ablated terms zeroed in both
/// the total and the breakdown.
pub fn total_loss(l_rec: f64, l_prf: f64, l_rel: f64, l_comp: f64, alpha: f64, beta: f64, ablation: Ablation) -> LossBreakdown {
    let l_prf = if ablation.uses_prf() { l_prf } else { 0.0 };
    let l_rel = if ablation.uses_rel() { l_rel } else { 0.0 };
    let l_comp = if ablation.uses_comp() { l_comp } else { 0.0 };
    LossBreakdown {
        l_rec,
        l_prf,
        l_rel,
        l_comp,
        total: l_rec + alpha * (l_prf + l_rel) + beta * l_comp,
    }
}

/// Value and representation gradient of the BPR term.
#[derive(Clone, Debug)]
pub struct RecGrad {
    pub value: f64,
    pub d_h: Array2<f64>,
    /// Gradient with respect to the per-triple weights, when given.
    pub d_weights: Option<Array1<f64>>,
}

/// Mean over triples of `w · softplus(−(h_u·h_i − h_u·h_j))`; `h` is in the
/// unified index and `weights` defaults to one.
pub fn loss_rec(h: ArrayView2<f64>, num_users: usize, triples: &[Triple], weights: Option<ArrayView1<f64>>) -> f64 {
    rec_with_grad(h, num_users, triples, weights).value
}

pub fn rec_with_grad(
    h: ArrayView2<f64>,
    num_users: usize,
    triples: &[Triple],
    weights: Option<ArrayView1<f64>>,
) -> RecGrad {
    let m = triples.len().max(1) as f64;
    let mut d_h = Array2::zeros(h.raw_dim());
    let mut d_w = weights.map(|w| Array1::zeros(w.len()));
    let mut value = 0.0;
    for (k, t) in triples.iter().enumerate() {
        let (u, i, j) = (t.user, num_users + t.pos, num_users + t.neg);
        let hu = h.row(u);
        let margin = hu.dot(&h.row(i)) - hu.dot(&h.row(j));
        let w = weights.map_or(1.0, |w| w[k]);
        let term = softplus(-margin);
        value += w * term;
        if let Some(dw) = d_w.as_mut() {
            dw[k] = term / m;
        }
        // d softplus(−x)/dx = −σ(−x)
        let g = -w * sigmoid(-margin) / m;
        let diff = &h.row(i) - &h.row(j);
        d_h.row_mut(u).scaled_add(g, &diff);
        d_h.row_mut(i).scaled_add(g, &hu);
        d_h.row_mut(j).scaled_add(-g, &hu);
    }
    RecGrad {
        value: value / m,
        d_h,
        d_weights: d_w,
    }
}

/// Summed InfoNCE over anchors with gradients for both sides.
#[derive(Clone, Debug)]
pub struct ContrastGrad {
    pub sum: f64,
    /// Anchors that contributed (those with at least one negative).
    pub count: usize,
    pub d_anchors: Array2<f64>,
    pub d_targets: Array2<f64>,
    /// Similarities involving a zero vector.
    pub zero_norms: usize,
}

/// Row `v` of `anchors` is contrasted against row `v` of `targets` (the
/// positive) and the other rows (negatives). Similarities are cosines over
/// `tau`. The literal form leaves the positive out of the denominator.
pub fn contrast(anchors: ArrayView2<f64>, targets: ArrayView2<f64>, tau: f64, inclusive: bool) -> ContrastGrad {
    let n = anchors.nrows();
    let mut out = ContrastGrad {
        sum: 0.0,
        count: 0,
        d_anchors: Array2::zeros(anchors.raw_dim()),
        d_targets: Array2::zeros(targets.raw_dim()),
        zero_norms: 0,
    };
    if n < 2 {
        return out;
    }
    let an: Vec<f64> = anchors.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let tn: Vec<f64> = targets.rows().into_iter().map(|r| r.dot(&r).sqrt()).collect();
    let mut cos = Array2::zeros((n, n));
    for v in 0..n {
        for w in 0..n {
            if an[v] == 0.0 || tn[w] == 0.0 {
                out.zero_norms += 1;
            } else {
                cos[[v, w]] = anchors.row(v).dot(&targets.row(w)) / (an[v] * tn[w]);
            }
        }
    }
    // ∂/∂s_vw of the per-anchor loss, s = cos / τ
    let mut d_s = Array2::<f64>::zeros((n, n));
    for v in 0..n {
        let in_denominator = |w: usize| inclusive || w != v;
        let max = (0..n)
            .filter(|&w| in_denominator(w))
            .map(|w| cos[[v, w]] / tau)
            .fold(f64::NEG_INFINITY, f64::max);
        let z: f64 = (0..n)
            .filter(|&w| in_denominator(w))
            .map(|w| (cos[[v, w]] / tau - max).exp())
            .sum();
        out.sum += -cos[[v, v]] / tau + max + z.ln();
        for w in (0..n).filter(|&w| in_denominator(w)) {
            d_s[[v, w]] = (cos[[v, w]] / tau - max).exp() / z;
        }
        d_s[[v, v]] -= 1.0;
    }
    out.count = n;
    for v in 0..n {
        for w in 0..n {
            let g = d_s[[v, w]] / tau;
            if g == 0.0 || an[v] == 0.0 || tn[w] == 0.0 {
                continue;
            }
            let c = cos[[v, w]];
            let inv = 1.0 / (an[v] * tn[w]);
            // ∂c/∂a = b/(|a||b|) − c a/|a|², symmetric in b
            let a = anchors.row(v);
            let b = targets.row(w);
            out.d_anchors.row_mut(v).scaled_add(g * inv, &b);
            out.d_anchors.row_mut(v).scaled_add(-g * c / (an[v] * an[v]), &a);
            out.d_targets.row_mut(w).scaled_add(g * inv, &a);
            out.d_targets.row_mut(w).scaled_add(-g * c / (tn[w] * tn[w]), &b);
        }
    }
    out
}

/// InfoNCE between `h′` and a target view over the batch's users and items,
/// averaged over contributing anchors. Negatives are same-type batch nodes.
#[allow(clippy::too_many_arguments)]
pub fn alignment_loss(
    h: ArrayView2<f64>,
    user_targets: ArrayView2<f64>,
    item_targets: ArrayView2<f64>,
    num_users: usize,
    users: &[usize],
    items: &[usize],
    tau: f64,
    inclusive: bool,
) -> f64 {
    let item_nodes: Vec<usize> = items.iter().map(|&i| num_users + i).collect();
    let cu = contrast(h.select(Axis(0), users).view(), user_targets.select(Axis(0), users).view(), tau, inclusive);
    let ci = contrast(
        h.select(Axis(0), &item_nodes).view(),
        item_targets.select(Axis(0), items).view(),
        tau,
        inclusive,
    );
    let count = cu.count + ci.count;
    if count == 0 {
        0.0
    } else {
        (cu.sum + ci.sum) / count as f64
    }
}

/// Alignment of `h′` with the preference embeddings Ẽ_u, Ẽ_i.
#[allow(clippy::too_many_arguments)]
pub fn loss_prf(
    h: ArrayView2<f64>,
    user_embeddings: ArrayView2<f64>,
    item_embeddings: ArrayView2<f64>,
    num_users: usize,
    users: &[usize],
    items: &[usize],
    tau: f64,
    inclusive: bool,
) -> f64 {
    alignment_loss(h, user_embeddings, item_embeddings, num_users, users, items, tau, inclusive)
}

/// Alignment of `h′` with the enriched-graph view `ĥ` (unified index).
pub fn loss_rel(
    h: ArrayView2<f64>,
    h_hat: ArrayView2<f64>,
    num_users: usize,
    users: &[usize],
    items: &[usize],
    tau: f64,
    inclusive: bool,
) -> f64 {
    let (hu, hi) = h_hat.split_at(Axis(0), num_users);
    alignment_loss(h, hu, hi, num_users, users, items, tau, inclusive)
}

/// `exp(−‖x_v − x_j‖² / (2σ²))`.
pub fn kernel_matrix(points: ArrayView2<f64>, bandwidth: f64) -> Array2<f64> {
    let n = points.nrows();
    let mut k = Array2::ones((n, n));
    let denom = 2.0 * bandwidth * bandwidth;
    for v in 0..n {
        for j in v + 1..n {
            let diff = &points.row(v) - &points.row(j);
            let val = (-diff.dot(&diff) / denom).exp();
            k[[v, j]] = val;
            k[[j, v]] = val;
        }
    }
    k
}

/// Median pairwise Euclidean distance; 1 when there are fewer than two
/// points or the median is zero.
pub fn median_bandwidth(points: ArrayView2<f64>) -> f64 {
    let n = points.nrows();
    let mut dists = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    for v in 0..n {
        for j in v + 1..n {
            let diff = &points.row(v) - &points.row(j);
            dists.push(diff.dot(&diff).sqrt());
        }
    }
    if dists.is_empty() {
        return 1.0;
    }
    dists.sort_by(f64::total_cmp);
    let m = dists.len();
    let med = if m % 2 == 1 {
        dists[m / 2]
    } else {
        0.5 * (dists[m / 2 - 1] + dists[m / 2])
    };
    if med > 0.0 {
        med
    } else {
        1.0
    }
}

/// `H K H` with `H = I − 11ᵀ/n`.
pub fn center(k: ArrayView2<f64>) -> Array2<f64> {
    let n = k.nrows() as f64;
    let row = k.mean_axis(Axis(1)).expect("non-empty");
    let col = k.mean_axis(Axis(0)).expect("non-empty");
    let all = row.sum() / n;
    let mut out = k.to_owned();
    for ((a, b), v) in out.indexed_iter_mut() {
        *v += all - row[a] - col[b];
    }
    out
}

/// `tr(HKH · HMH) / (n − 1)²`.
pub fn hsic(k: ArrayView2<f64>, m: ArrayView2<f64>) -> Result<f64> {
    let n = k.nrows();
    if n < 2 || m.nrows() != n {
        return Err(Error::Validation(format!(
            "HSIC needs two same-size Gram matrices with n ≥ 2 (got {} and {})",
            n,
            m.nrows()
        )));
    }
    let kc = center(k);
    let mc = center(m);
    Ok((&kc * &mc).sum() / ((n - 1) * (n - 1)) as f64)
}

/// Gradient of `Σ G_vj K_vj` with respect to the points, for symmetric `G`
/// and a constant bandwidth.
pub fn kernel_backward(points: ArrayView2<f64>, k: ArrayView2<f64>, bandwidth: f64, g: ArrayView2<f64>) -> Array2<f64> {
    let n = points.nrows();
    let mut out = Array2::zeros(points.raw_dim());
    let scale = -2.0 / (bandwidth * bandwidth);
    for v in 0..n {
        for j in 0..n {
            if v == j {
                continue;
            }
            let c = scale * g[[v, j]] * k[[v, j]];
            if c != 0.0 {
                let diff = &points.row(v) - &points.row(j);
                out.row_mut(v).scaled_add(c, &diff);
            }
        }
    }
    out
}

/// HSIC between the kernels of `x` and `y` (same rows) plus gradients for
/// both point sets.
pub fn hsic_with_grad(x: ArrayView2<f64>, y: ArrayView2<f64>, sigma_k: f64, sigma_m: f64) -> (f64, Array2<f64>, Array2<f64>) {
    let n = x.nrows();
    if n < 2 {
        return (0.0, Array2::zeros(x.raw_dim()), Array2::zeros(y.raw_dim()));
    }
    let k = kernel_matrix(x, sigma_k);
    let m = kernel_matrix(y, sigma_m);
    let kc = center(k.view());
    let mc = center(m.view());
    let norm = ((n - 1) * (n - 1)) as f64;
    let value = (&kc * &mc).sum() / norm;
    let dk = &mc / norm;
    let dm = &kc / norm;
    (
        value,
        kernel_backward(x, k.view(), sigma_k, dk.view()),
        kernel_backward(y, m.view(), sigma_m, dm.view()),
    )
}
