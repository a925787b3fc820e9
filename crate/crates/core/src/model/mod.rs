//! Embedding table, Gumbel-relaxed edge mask, and the GMF / LightGCN
//! backbones over weighted graphs.

mod checkpoint;

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::data::{InteractionGraph, NormalizedAdjacency};
use crate::preference::{HiddenLayer, ProjectionHead};

pub use checkpoint::{read_checkpoint, write_checkpoint, Checkpoint, OptimizerState};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Backbone {
    Gmf,
    LightGcn,
}

impl Backbone {
    pub fn name(&self) -> &'static str {
        match self {
            Backbone::Gmf => "gmf",
            Backbone::LightGcn => "lightgcn",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s.to_ascii_lowercase().as_str() {
            "gmf" | "mf" => Some(Backbone::Gmf),
            "lightgcn" => Some(Backbone::LightGcn),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelConfig {
    pub backbone: Backbone,
    pub dim: usize,
    pub layers: usize,
    pub mask_hidden: usize,
    /// Initial output bias of the mask generator.
    pub mask_init_bias: f64,
    pub text_dim: usize,
    pub head_hidden: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self {
            backbone: Backbone::LightGcn,
            dim: 64,
            layers: 3,
            mask_hidden: 64,
            mask_init_bias: 1.0,
            text_dim: 64,
            head_hidden: None,
        }
    }
}

/// Node embeddings in the unified index: users first, then items.
#[derive(Clone, Debug, PartialEq)]
pub struct EmbeddingTable {
    pub num_users: usize,
    pub weights: Array2<f64>,
}

impl EmbeddingTable {
    /// Entries drawn from N(0, 0.1²).
    pub fn new<R: Rng>(num_users: usize, num_items: usize, dim: usize, rng: &mut R) -> Self {
        let normal = Normal::new(0.0, 0.1).expect("valid normal");
        Self {
            num_users,
            weights: Array2::from_shape_simple_fn((num_users + num_items, dim), || normal.sample(rng)),
        }
    }

    pub fn zeros(num_users: usize, num_items: usize, dim: usize) -> Self {
        Self {
            num_users,
            weights: Array2::zeros((num_users + num_items, dim)),
        }
    }

    pub fn num_items(&self) -> usize {
        self.weights.nrows() - self.num_users
    }

    pub fn dim(&self) -> usize {
        self.weights.ncols()
    }

    pub fn user(&self, u: usize) -> ArrayView1<'_, f64> {
        self.weights.row(u)
    }

    pub fn item(&self, i: usize) -> ArrayView1<'_, f64> {
        self.weights.row(self.num_users + i)
    }
}

/// Φ: `[e_a ∥ e_b] → relu(W1 x + b1) → w2·a + b2`.
#[derive(Clone, Debug, PartialEq)]
pub struct MaskGenerator {
    /// `h × 2d`
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array1<f64>,
    /// Length-one output bias.
    pub b2: Array1<f64>,
}

/// Intermediate values kept for the backward pass.
#[derive(Clone, Debug)]
pub struct MaskForward {
    pub inputs: Array2<f64>,
    pub pre: Array2<f64>,
    pub logits: Array1<f64>,
}

impl MaskGenerator {
    /// He-uniform first layer, Glorot-uniform output layer.
    pub fn new<R: Rng>(dim: usize, hidden: usize, init_bias: f64, rng: &mut R) -> Self {
        let l1 = (6.0 / (2 * dim) as f64).sqrt();
        let l2 = (6.0 / (hidden + 1) as f64).sqrt();
        Self {
            w1: Array2::from_shape_simple_fn((hidden, 2 * dim), || rng.random_range(-l1..l1)),
            b1: Array1::zeros(hidden),
            w2: Array1::from_shape_simple_fn(hidden, || rng.random_range(-l2..l2)),
            b2: Array1::from_elem(1, init_bias),
        }
    }

    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            w1: Array2::zeros((hidden, 2 * dim)),
            b1: Array1::zeros(hidden),
            w2: Array1::zeros(hidden),
            b2: Array1::zeros(1),
        }
    }

    pub fn hidden(&self) -> usize {
        self.w1.nrows()
    }

    /// Logits for node pairs `(a, b)`, rows of `embeddings`.
    pub fn forward(&self, embeddings: ArrayView2<f64>, pairs: &[(usize, usize)]) -> MaskForward {
        let d = embeddings.ncols();
        let mut inputs = Array2::zeros((pairs.len(), 2 * d));
        for (r, &(a, b)) in pairs.iter().enumerate() {
            inputs.slice_mut(s![r, ..d]).assign(&embeddings.row(a));
            inputs.slice_mut(s![r, d..]).assign(&embeddings.row(b));
        }
        let pre = inputs.dot(&self.w1.t()) + &self.b1;
        let logits = pre.mapv(|z| z.max(0.0)).dot(&self.w2) + self.b2[0];
        MaskForward { inputs, pre, logits }
    }

    /// Accumulates parameter gradients into `grad` and input gradients into
    /// `d_embeddings`, given `d_logits`.
    pub fn backward(
        &self,
        fwd: &MaskForward,
        pairs: &[(usize, usize)],
        d_logits: ArrayView1<f64>,
        grad: &mut MaskGenerator,
        d_embeddings: &mut Array2<f64>,
    ) {
        let act = fwd.pre.mapv(|z| z.max(0.0));
        grad.w2 += &act.t().dot(&d_logits);
        grad.b2[0] += d_logits.sum();
        let mut d_pre = d_logits
            .insert_axis(Axis(1))
            .dot(&self.w2.view().insert_axis(Axis(0)));
        d_pre.zip_mut_with(&fwd.pre, |g, &z| {
            if z <= 0.0 {
                *g = 0.0
            }
        });
        grad.w1 += &d_pre.t().dot(&fwd.inputs);
        grad.b1 += &d_pre.sum_axis(Axis(0));
        let d_in = d_pre.dot(&self.w1);
        let d = d_embeddings.ncols();
        for (r, &(a, b)) in pairs.iter().enumerate() {
            let mut ra = d_embeddings.row_mut(a);
            ra += &d_in.slice(s![r, ..d]);
            let mut rb = d_embeddings.row_mut(b);
            rb += &d_in.slice(s![r, d..]);
        }
    }
}

/// Unified node pairs `(user, num_users + item)` of the graph's edges.
pub fn edge_pairs(graph: &InteractionGraph) -> Vec<(usize, usize)> {
    graph.edges().iter().map(|e| (e.a, e.b)).collect()
}

/// λ per edge, aligned with `pairs`.
pub fn edge_logits(mask: &MaskGenerator, embeddings: ArrayView2<f64>, pairs: &[(usize, usize)]) -> Array1<f64> {
    mask.forward(embeddings, pairs).logits
}

pub const NOISE_EPS: f64 = 1e-6;

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// δ ~ Uniform(ε, 1 − ε) per edge.
pub fn gumbel_noise<R: Rng>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.random_range(NOISE_EPS..1.0 - NOISE_EPS)).collect()
}

/// `q = σ((ln δ − ln(1 − δ) + λ) / τ)`.
pub fn mask_from_noise(logits: ArrayView1<f64>, tau: f64, delta: &[f64]) -> Array1<f64> {
    assert_eq!(logits.len(), delta.len(), "one noise value per edge");
    Array1::from_iter(
        logits
            .iter()
            .zip(delta)
            .map(|(&l, &d)| sigmoid(((d.ln() - (1.0 - d).ln()) + l) / tau)),
    )
}

/// Deterministic `q = σ(λ / τ)`, the δ = 0.5 case.
pub fn eval_mask(logits: ArrayView1<f64>, tau: f64) -> Array1<f64> {
    logits.mapv(|l| sigmoid(l / tau))
}

pub fn sample_mask<R: Rng>(logits: ArrayView1<f64>, tau: f64, rng: &mut R, train_mode: bool) -> Array1<f64> {
    if train_mode {
        mask_from_noise(logits, tau, &gumbel_noise(logits.len(), rng))
    } else {
        eval_mask(logits, tau)
    }
}

/// A graph with per-edge soft weights and the thresholded edge set.
#[derive(Clone, Debug)]
pub struct MaskedGraph {
    pub q: Array1<f64>,
    pub adjacency: NormalizedAdjacency,
    pub hard: Vec<bool>,
}

pub fn apply_mask(graph: &InteractionGraph, q: ArrayView1<f64>) -> MaskedGraph {
    let q = q.to_owned();
    let adjacency = graph.normalize_with(q.as_slice().expect("contiguous"));
    let hard = q.iter().map(|&v| v >= 0.5).collect();
    MaskedGraph { q, adjacency, hard }
}

/// `X_0 = table`, `X_{l+1} = Â X_l` for l < L.
pub fn propagate_layers(adjacency: &NormalizedAdjacency, table: ArrayView2<f64>, layers: usize) -> Vec<Array2<f64>> {
    let mut out = Vec::with_capacity(layers + 1);
    out.push(table.to_owned());
    for l in 0..layers {
        let next = adjacency.propagate(out[l].view());
        out.push(next);
    }
    out
}

/// Mean of the propagated layers 0..=L.
pub fn forward_lightgcn(adjacency: &NormalizedAdjacency, table: ArrayView2<f64>, layers: usize) -> Array2<f64> {
    layer_mean(&propagate_layers(adjacency, table, layers))
}

pub fn layer_mean(layers: &[Array2<f64>]) -> Array2<f64> {
    let mut acc = layers[0].clone();
    for x in &layers[1..] {
        acc += x;
    }
    acc / layers.len() as f64
}

/// Sum over embedding dimensions of `e_u ⊙ e_i`.
pub fn forward_gmf(table: &EmbeddingTable, user: usize, item: usize) -> f64 {
    table.user(user).dot(&table.item(item))
}

/// `h_u · h_i` for every item; `h` is in the unified index.
pub fn score_all(h: ArrayView2<f64>, num_users: usize, user: usize) -> Array1<f64> {
    h.slice(s![num_users.., ..]).dot(&h.row(user))
}

/// All trainable parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Model {
    pub config: ModelConfig,
    pub table: EmbeddingTable,
    pub mask: MaskGenerator,
    pub head: ProjectionHead,
}

impl Model {
    pub fn new<R: Rng>(config: ModelConfig, num_users: usize, num_items: usize, rng: &mut R) -> Self {
        let table = EmbeddingTable::new(num_users, num_items, config.dim, rng);
        let mask = MaskGenerator::new(config.dim, config.mask_hidden, config.mask_init_bias, rng);
        let head = ProjectionHead::new(config.text_dim, config.dim, config.head_hidden, rng);
        Self {
            config,
            table,
            mask,
            head,
        }
    }

    pub fn zeros(config: ModelConfig, num_users: usize, num_items: usize) -> Self {
        let mut head = ProjectionHead::zeros(config.text_dim, config.dim);
        if let Some(h) = config.head_hidden {
            head.weight = Array2::zeros((config.dim, h));
            head.hidden = Some(HiddenLayer {
                weight: Array2::zeros((h, config.text_dim)),
                bias: Array1::zeros(h),
            });
        }
        Self {
            config,
            table: EmbeddingTable::zeros(num_users, num_items, config.dim),
            mask: MaskGenerator::zeros(config.dim, config.mask_hidden),
            head,
        }
    }

    /// Same shapes, all zeros.
    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    pub fn num_users(&self) -> usize {
        self.table.num_users
    }

    pub fn num_items(&self) -> usize {
        self.table.num_items()
    }

    pub fn tensors(&self) -> Vec<(&'static str, &[f64])> {
        let mut out: Vec<(&'static str, &[f64])> = vec![
            ("embeddings", self.table.weights.as_slice().expect("standard layout")),
            ("mask.w1", self.mask.w1.as_slice().expect("standard layout")),
            ("mask.b1", self.mask.b1.as_slice().expect("standard layout")),
            ("mask.w2", self.mask.w2.as_slice().expect("standard layout")),
            ("mask.b2", self.mask.b2.as_slice().expect("standard layout")),
            ("head.weight", self.head.weight.as_slice().expect("standard layout")),
            ("head.bias", self.head.bias.as_slice().expect("standard layout")),
        ];
        if let Some(h) = &self.head.hidden {
            out.push(("head.hidden.weight", h.weight.as_slice().expect("standard layout")));
            out.push(("head.hidden.bias", h.bias.as_slice().expect("standard layout")));
        }
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(&'static str, &mut [f64])> {
        let Model { table, mask, head, .. } = self;
        let ProjectionHead { weight, bias, hidden } = head;
        let mut out: Vec<(&'static str, &mut [f64])> = vec![
            ("embeddings", table.weights.as_slice_mut().expect("standard layout")),
            ("mask.w1", mask.w1.as_slice_mut().expect("standard layout")),
            ("mask.b1", mask.b1.as_slice_mut().expect("standard layout")),
            ("mask.w2", mask.w2.as_slice_mut().expect("standard layout")),
            ("mask.b2", mask.b2.as_slice_mut().expect("standard layout")),
            ("head.weight", weight.as_slice_mut().expect("standard layout")),
            ("head.bias", bias.as_slice_mut().expect("standard layout")),
        ];
        if let Some(HiddenLayer { weight, bias }) = hidden {
            out.push(("head.hidden.weight", weight.as_slice_mut().expect("standard layout")));
            out.push(("head.hidden.bias", bias.as_slice_mut().expect("standard layout")));
        }
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|(_, t)| t.iter().all(|v| v.is_finite()))
    }

    /// Rounds every parameter to the nearest f32.
    pub fn round_to_f32(&mut self) {
        for (_, t) in self.tensors_mut() {
            for v in t.iter_mut() {
                *v = *v as f32 as f64;
            }
        }
    }

    /// Eval-mode soft mask over `graph`'s edges; all ones when `frozen`.
    pub fn eval_mask(&self, graph: &InteractionGraph, tau: f64, frozen: bool) -> Array1<f64> {
        if frozen {
            return Array1::ones(graph.edges().len());
        }
        let logits = edge_logits(&self.mask, self.table.weights.view(), &edge_pairs(graph));
        eval_mask(logits.view(), tau)
    }

    /// Representations used for scoring: LightGCN over the eval-mode masked
    /// graph, or the raw table under GMF.
    pub fn representations(&self, graph: &InteractionGraph, tau: f64, frozen_mask: bool) -> Array2<f64> {
        match self.config.backbone {
            Backbone::Gmf => self.table.weights.clone(),
            Backbone::LightGcn => {
                let q = self.eval_mask(graph, tau, frozen_mask);
                let masked = apply_mask(graph, q.view());
                forward_lightgcn(&masked.adjacency, self.table.weights.view(), self.config.layers)
            }
        }
    }
}

/// `user \t item \t q` per training edge followed by the hard edge list.
pub fn export_graph_text(dataset: &crate::data::Dataset, graph: &InteractionGraph, q: ArrayView1<f64>) -> String {
    let nu = dataset.num_users();
    let mut out = String::from("# soft\tuser\titem\tq\n");
    let mut hard = String::from("# hard\tuser\titem\n");
    for (e, edge) in graph.edges().iter().enumerate() {
        let (u, i) = (edge.a, edge.b - nu);
        let (uid, iid) = (dataset.user_id(u), dataset.item_id(i));
        out.push_str(&format!("{uid}\t{iid}\t{:.9}\n", q[e]));
        if q[e] >= 0.5 {
            hard.push_str(&format!("{uid}\t{iid}\n"));
        }
    }
    out.push_str(&hard);
    out
}
