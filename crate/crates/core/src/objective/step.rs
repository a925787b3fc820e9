//! One forward and backward pass of the full objective for a triple batch.

use ndarray::{Array1, Array2, ArrayView2, Axis};

use super::{contrast, hsic_with_grad, median_bandwidth, rec_with_grad, total_loss, Ablation, LossBreakdown};
use crate::data::{InteractionGraph, NormalizedAdjacency, TripleBatch};
use crate::error::{Error, Result};
use crate::model::{layer_mean, mask_from_noise, eval_mask, propagate_layers, Backbone, Model};

/// Graph context shared by every step.
pub struct Views<'a> {
    /// Training graph G; its edge `e` is training interaction `e`.
    pub graph: &'a InteractionGraph,
    /// Unified node pairs of `graph`'s edges.
    pub pairs: &'a [(usize, usize)],
    /// Normalized enriched graph G_rel.
    pub enriched: Option<&'a NormalizedAdjacency>,
    /// Pooled text vectors of K_p (users, items).
    pub text: Option<(ArrayView2<'a, f64>, ArrayView2<'a, f64>)>,
}

/// Kernel bandwidths `(σ_k, σ_m)` for the user and item HSIC terms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Bandwidths {
    pub users: (f64, f64),
    pub items: (f64, f64),
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepConfig {
    pub alpha: f64,
    pub beta: f64,
    pub contrast_tau: f64,
    pub gumbel_tau: f64,
    pub inclusive_nce: bool,
    pub freeze_mask: bool,
    pub ablation: Ablation,
    /// `None` uses the per-batch median heuristic.
    pub bandwidths: Option<Bandwidths>,
}

#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub losses: LossBreakdown,
    pub grad: Model,
    pub q: Array1<f64>,
    pub bandwidths: Bandwidths,
    pub zero_norms: usize,
}

/// Backward through `h = mean_l X_l`, `X_{l+1} = Â X_l` for symmetric `Â`.
/// Returns `∂/∂X_0` and, when `edges` is given, `(∂/∂Â_ab, ∂/∂Â_ba)` per
/// edge `(a, b)`.
fn propagation_backward(
    adjacency: &NormalizedAdjacency,
    layers: &[Array2<f64>],
    d_out: &Array2<f64>,
    edges: Option<&[(usize, usize)]>,
) -> (Array2<f64>, Vec<(f64, f64)>) {
    let depth = layers.len() - 1;
    let share = d_out / (depth + 1) as f64;
    let mut d_adj = vec![(0.0, 0.0); edges.map_or(0, |e| e.len())];
    // g holds ∂/∂X_{l+1} while visiting layer l
    let mut g = share.clone();
    for l in (0..depth).rev() {
        if let Some(edges) = edges {
            let x = &layers[l];
            for (slot, &(a, b)) in d_adj.iter_mut().zip(edges) {
                slot.0 += g.row(a).dot(&x.row(b));
                slot.1 += g.row(b).dot(&x.row(a));
            }
        }
        g = adjacency.propagate(g.view()) + &share;
    }
    (g, d_adj)
}

/// ∂L/∂w_e through `Â = D^{-1/2} W D^{-1/2}` given `∂L/∂Â` on each edge's
/// two entries.
fn edge_weight_grad(num_nodes: usize, pairs: &[(usize, usize)], w: &Array1<f64>, d_adj: &[(f64, f64)]) -> Array1<f64> {
    let mut deg = vec![0.0; num_nodes];
    for (&(a, b), &we) in pairs.iter().zip(w.iter()) {
        deg[a] += we;
        deg[b] += we;
    }
    let mut r = vec![0.0; num_nodes];
    let mut norm = vec![0.0; pairs.len()];
    for (e, &(a, b)) in pairs.iter().enumerate() {
        if deg[a] > 0.0 && deg[b] > 0.0 {
            norm[e] = 1.0 / (deg[a] * deg[b]).sqrt();
            let s = (d_adj[e].0 + d_adj[e].1) * w[e] * norm[e];
            r[a] += s;
            r[b] += s;
        }
    }
    Array1::from_iter(pairs.iter().enumerate().map(|(e, &(a, b))| {
        if norm[e] == 0.0 {
            return 0.0;
        }
        (d_adj[e].0 + d_adj[e].1) * norm[e] - r[a] / (2.0 * deg[a]) - r[b] / (2.0 * deg[b])
    }))
}

fn non_finite(term: &str, step: usize) -> Error {
    Error::NonFinite {
        term: term.to_string(),
        step,
    }
}

/// Losses and exact gradients for every parameter. `delta` is the Gumbel
/// noise per training edge; `None` evaluates with the deterministic mask.
pub fn forward_backward(
    model: &Model,
    views: &Views,
    batch: &TripleBatch,
    delta: Option<&[f64]>,
    cfg: &StepConfig,
    step: usize,
) -> Result<StepOutcome> {
    let nu = model.num_users();
    let n_nodes = model.table.weights.nrows();
    let e = model.table.weights.view();
    let layers = model.config.layers;
    let ab = cfg.ablation;
    let use_prf = ab.uses_prf() && views.text.is_some();
    let use_rel = ab.uses_rel() && views.enriched.is_some();
    let use_comp = ab.uses_comp();
    let use_mask = !cfg.freeze_mask;

    // mask
    let mask_fwd = use_mask.then(|| model.mask.forward(e, views.pairs));
    let q = match &mask_fwd {
        None => Array1::ones(views.pairs.len()),
        Some(f) => match delta {
            Some(d) => mask_from_noise(f.logits.view(), cfg.gumbel_tau, d),
            None => eval_mask(f.logits.view(), cfg.gumbel_tau),
        },
    };

    // representations
    let masked_adj;
    let masked_layers;
    let h_masked = match model.config.backbone {
        Backbone::Gmf => {
            masked_adj = None;
            masked_layers = Vec::new();
            e.to_owned()
        }
        Backbone::LightGcn => {
            let adj = views.graph.normalize_with(q.as_slice().expect("contiguous"));
            masked_layers = propagate_layers(&adj, e, layers);
            masked_adj = Some(adj);
            layer_mean(&masked_layers)
        }
    };
    let plain_layers = match (use_comp, model.config.backbone) {
        (true, Backbone::LightGcn) => propagate_layers(views.graph.adjacency(), e, layers),
        _ => Vec::new(),
    };
    let h_plain = if plain_layers.is_empty() {
        e.to_owned()
    } else {
        layer_mean(&plain_layers)
    };
    let rel_layers = match (use_rel, views.enriched) {
        (true, Some(adj)) => propagate_layers(adj, e, layers),
        _ => Vec::new(),
    };

    let users = batch.users();
    let items = batch.items();
    let item_nodes: Vec<usize> = items.iter().map(|&i| nu + i).collect();

    let mut d_masked = Array2::<f64>::zeros((n_nodes, model.config.dim));
    let mut d_plain = Array2::<f64>::zeros((n_nodes, model.config.dim));
    let mut d_rel = Array2::<f64>::zeros((n_nodes, model.config.dim));
    let mut d_q = Array1::<f64>::zeros(q.len());
    let mut grad = model.zeros_like();
    let mut zero_norms = 0;

    // BPR
    let rec_weights = match (model.config.backbone, use_mask) {
        (Backbone::Gmf, true) => Some(Array1::from_iter(batch.triples.iter().map(|t| q[t.edge]))),
        _ => None,
    };
    let rec = rec_with_grad(h_masked.view(), nu, &batch.triples, rec_weights.as_ref().map(|w| w.view()));
    d_masked += &rec.d_h;
    if let Some(dw) = &rec.d_weights {
        for (t, g) in batch.triples.iter().zip(dw.iter()) {
            d_q[t.edge] += g;
        }
    }

    // alignment terms share one normalization over contributing anchors
    let scatter = |target: &mut Array2<f64>, rows: &[usize], d: &Array2<f64>, scale: f64| {
        for (r, &node) in rows.iter().enumerate() {
            target.row_mut(node).scaled_add(scale, &d.row(r));
        }
    };
    let anchors_u = h_masked.select(Axis(0), &users);
    let anchors_i = h_masked.select(Axis(0), &item_nodes);

    let mut l_prf = 0.0;
    if use_prf {
        let (tu, ti) = views.text.expect("checked");
        let tu_b = tu.select(Axis(0), &users);
        let ti_b = ti.select(Axis(0), &items);
        let eu = model.head.forward(tu_b.view());
        let ei = model.head.forward(ti_b.view());
        let cu = contrast(anchors_u.view(), eu.view(), cfg.contrast_tau, cfg.inclusive_nce);
        let ci = contrast(anchors_i.view(), ei.view(), cfg.contrast_tau, cfg.inclusive_nce);
        zero_norms += cu.zero_norms + ci.zero_norms;
        let count = cu.count + ci.count;
        if count > 0 {
            let scale = 1.0 / count as f64;
            l_prf = (cu.sum + ci.sum) * scale;
            let w = cfg.alpha * scale;
            scatter(&mut d_masked, &users, &cu.d_anchors, w);
            scatter(&mut d_masked, &item_nodes, &ci.d_anchors, w);
            let hu = model.head.backward(tu_b.view(), (&cu.d_targets * w).view());
            let hi = model.head.backward(ti_b.view(), (&ci.d_targets * w).view());
            grad.head.weight += &(hu.weight + hi.weight);
            grad.head.bias += &(hu.bias + hi.bias);
            if let (Some(g), Some((w1u, b1u)), Some((w1i, b1i))) = (grad.head.hidden.as_mut(), hu.hidden, hi.hidden) {
                g.weight += &(w1u + w1i);
                g.bias += &(b1u + b1i);
            }
        }
    }

    let mut l_rel = 0.0;
    if use_rel {
        let h_hat = layer_mean(&rel_layers);
        let tu = h_hat.select(Axis(0), &users);
        let ti = h_hat.select(Axis(0), &item_nodes);
        let cu = contrast(anchors_u.view(), tu.view(), cfg.contrast_tau, cfg.inclusive_nce);
        let ci = contrast(anchors_i.view(), ti.view(), cfg.contrast_tau, cfg.inclusive_nce);
        zero_norms += cu.zero_norms + ci.zero_norms;
        let count = cu.count + ci.count;
        if count > 0 {
            let scale = 1.0 / count as f64;
            l_rel = (cu.sum + ci.sum) * scale;
            let w = cfg.alpha * scale;
            scatter(&mut d_masked, &users, &cu.d_anchors, w);
            scatter(&mut d_masked, &item_nodes, &ci.d_anchors, w);
            scatter(&mut d_rel, &users, &cu.d_targets, w);
            scatter(&mut d_rel, &item_nodes, &ci.d_targets, w);
        }
    }

    // compression
    let x_u = h_plain.select(Axis(0), &users);
    let y_u = h_masked.select(Axis(0), &users);
    let x_i = h_plain.select(Axis(0), &item_nodes);
    let y_i = h_masked.select(Axis(0), &item_nodes);
    let bandwidths = cfg.bandwidths.unwrap_or_else(|| Bandwidths {
        users: (median_bandwidth(x_u.view()), median_bandwidth(y_u.view())),
        items: (median_bandwidth(x_i.view()), median_bandwidth(y_i.view())),
    });
    let mut l_comp = 0.0;
    if use_comp {
        let (vu, dxu, dyu) = hsic_with_grad(x_u.view(), y_u.view(), bandwidths.users.0, bandwidths.users.1);
        let (vi, dxi, dyi) = hsic_with_grad(x_i.view(), y_i.view(), bandwidths.items.0, bandwidths.items.1);
        l_comp = vu + vi;
        scatter(&mut d_plain, &users, &dxu, cfg.beta);
        scatter(&mut d_masked, &users, &dyu, cfg.beta);
        scatter(&mut d_plain, &item_nodes, &dxi, cfg.beta);
        scatter(&mut d_masked, &item_nodes, &dyi, cfg.beta);
    }

    let losses = total_loss(rec.value, l_prf, l_rel, l_comp, cfg.alpha, cfg.beta, ab);
    if let Some(term) = losses.non_finite() {
        return Err(non_finite(term, step));
    }

    // back to parameters
    let d_table = &mut grad.table.weights;
    match (&masked_adj, model.config.backbone) {
        (Some(adj), Backbone::LightGcn) => {
            let (d0, d_adj) = propagation_backward(adj, &masked_layers, &d_masked, use_mask.then_some(views.pairs));
            *d_table += &d0;
            if use_mask {
                d_q += &edge_weight_grad(n_nodes, views.pairs, &q, &d_adj);
            }
        }
        _ => *d_table += &d_masked,
    }
    if use_comp {
        if plain_layers.is_empty() {
            *d_table += &d_plain;
        } else {
            *d_table += &propagation_backward(views.graph.adjacency(), &plain_layers, &d_plain, None).0;
        }
    }
    if use_rel {
        let adj = views.enriched.expect("checked");
        *d_table += &propagation_backward(adj, &rel_layers, &d_rel, None).0;
    }
    if let Some(fwd) = &mask_fwd {
        let d_logits = Array1::from_iter(
            d_q.iter()
                .zip(q.iter())
                .map(|(g, qe)| g * qe * (1.0 - qe) / cfg.gumbel_tau),
        );
        model
            .mask
            .backward(fwd, views.pairs, d_logits.view(), &mut grad.mask, &mut grad.table.weights);
    }
    if !grad.is_finite() {
        return Err(non_finite("gradient", step));
    }
    Ok(StepOutcome {
        losses,
        grad,
        q,
        bandwidths,
        zero_norms,
    })
}
