//! Unified-index interaction graph. Users occupy nodes `0..num_users`, items
//! follow at `num_users..num_users + num_items`.

use std::collections::HashMap;

use ndarray::{Array2, ArrayView2};

use super::dataset::Dataset;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum GraphEdge {
    UserItem { user: usize, item: usize },
    UserUser { a: usize, b: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum EdgeKind {
    UserItem,
    UserUser,
}

/// Undirected edge between unified node ids, stored with `a < b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Edge {
    pub a: usize,
    pub b: usize,
    pub kind: EdgeKind,
}

/// Compressed symmetric matrix `D^{-1/2} W D^{-1/2}` where `D` holds the
/// weighted degrees. Nodes with zero weighted degree have empty rows.
#[derive(Clone, Debug, PartialEq)]
pub struct NormalizedAdjacency {
    n: usize,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    vals: Vec<f64>,
    degrees: Vec<f64>,
}

impl NormalizedAdjacency {
    pub fn num_nodes(&self) -> usize {
        self.n
    }

    pub fn degrees(&self) -> &[f64] {
        &self.degrees
    }

    pub fn row(&self, a: usize) -> impl Iterator<Item = (usize, f64)> + '_ {
        let range = self.row_ptr[a]..self.row_ptr[a + 1];
        self.cols[range.clone()].iter().copied().zip(self.vals[range].iter().copied())
    }

    pub fn get(&self, a: usize, b: usize) -> f64 {
        let range = self.row_ptr[a]..self.row_ptr[a + 1];
        match self.cols[range.clone()].binary_search(&b) {
            Ok(pos) => self.vals[range.start + pos],
            Err(_) => 0.0,
        }
    }

    pub fn nnz(&self) -> usize {
        self.cols.len()
    }

    /// `self · x` for a dense `n × d` matrix.
    pub fn propagate(&self, x: ArrayView2<f64>) -> Array2<f64> {
        assert_eq!(x.nrows(), self.n);
        let mut out = Array2::<f64>::zeros(x.raw_dim());
        for a in 0..self.n {
            let mut dst = out.row_mut(a);
            for (b, w) in self.row(a) {
                dst.scaled_add(w, &x.row(b));
            }
        }
        out
    }

    pub fn to_dense(&self) -> Array2<f64> {
        let mut out = Array2::zeros((self.n, self.n));
        for a in 0..self.n {
            for (b, w) in self.row(a) {
                out[[a, b]] = w;
            }
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct InteractionGraph {
    num_users: usize,
    num_items: usize,
    edges: Vec<Edge>,
    weights: Vec<f64>,
    /// CSR positions of (a,b) and (b,a) for each edge.
    slots: Vec<(usize, usize)>,
    row_ptr: Vec<usize>,
    cols: Vec<usize>,
    adjacency: NormalizedAdjacency,
}

impl InteractionGraph {
    /// Builds from (edge, weight) pairs. Duplicates collapse to the maximum
    /// weight and keep the position of their first occurrence.
    pub fn new(
        num_users: usize,
        num_items: usize,
        edges: impl IntoIterator<Item = (GraphEdge, f64)>,
    ) -> Result<Self> {
        let mut index: HashMap<(usize, usize), usize> = HashMap::new();
        let mut list: Vec<Edge> = Vec::new();
        let mut weights: Vec<f64> = Vec::new();
        for (edge, w) in edges {
            if !(w.is_finite() && (0.0..=1.0).contains(&w)) {
                return Err(Error::Validation(format!("edge weight {w} outside [0,1]")));
            }
            let (a, b, kind) = match edge {
                GraphEdge::UserItem { user, item } => {
                    check(user, num_users, "user")?;
                    check(item, num_items, "item")?;
                    (user, num_users + item, EdgeKind::UserItem)
                }
                GraphEdge::UserUser { a, b } => {
                    check(a, num_users, "user")?;
                    check(b, num_users, "user")?;
                    if a == b {
                        return Err(Error::Validation(format!("self-loop on user {a}")));
                    }
                    (a.min(b), a.max(b), EdgeKind::UserUser)
                }
            };
            match index.get(&(a, b)) {
                Some(&e) => weights[e] = weights[e].max(w),
                None => {
                    index.insert((a, b), list.len());
                    list.push(Edge { a, b, kind });
                    weights.push(w);
                }
            }
        }

        let n = num_users + num_items;
        let mut rows: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (e, edge) in list.iter().enumerate() {
            rows[edge.a].push((edge.b, e));
            rows[edge.b].push((edge.a, e));
        }
        let mut row_ptr = Vec::with_capacity(n + 1);
        let mut cols = Vec::new();
        let mut slots = vec![(usize::MAX, usize::MAX); list.len()];
        row_ptr.push(0);
        for (a, row) in rows.iter_mut().enumerate() {
            row.sort_unstable();
            for &(b, e) in row.iter() {
                if a == list[e].a {
                    slots[e].0 = cols.len();
                } else {
                    slots[e].1 = cols.len();
                }
                cols.push(b);
            }
            row_ptr.push(cols.len());
        }
        let mut graph = Self {
            num_users,
            num_items,
            edges: list,
            weights,
            slots,
            row_ptr,
            cols,
            adjacency: NormalizedAdjacency {
                n,
                row_ptr: Vec::new(),
                cols: Vec::new(),
                vals: Vec::new(),
                degrees: Vec::new(),
            },
        };
        graph.adjacency = graph.normalize_with(&graph.weights);
        Ok(graph)
    }

    pub fn num_users(&self) -> usize {
        self.num_users
    }

    pub fn num_items(&self) -> usize {
        self.num_items
    }

    pub fn num_nodes(&self) -> usize {
        self.num_users + self.num_items
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn adjacency(&self) -> &NormalizedAdjacency {
        &self.adjacency
    }

    pub fn item_node(&self, item: usize) -> usize {
        self.num_users + item
    }

    /// CSR positions of the two symmetric entries of edge `e`.
    pub fn edge_slots(&self, e: usize) -> (usize, usize) {
        self.slots[e]
    }

    /// The edge set as `GraphEdge`s, in storage order.
    pub fn graph_edges(&self) -> Vec<GraphEdge> {
        self.edges
            .iter()
            .map(|e| match e.kind {
                EdgeKind::UserItem => GraphEdge::UserItem {
                    user: e.a,
                    item: e.b - self.num_users,
                },
                EdgeKind::UserUser => GraphEdge::UserUser { a: e.a, b: e.b },
            })
            .collect()
    }

    /// Symmetric normalization of the same edge pattern under replacement
    /// weights (one per edge, in storage order).
    pub fn normalize_with(&self, weights: &[f64]) -> NormalizedAdjacency {
        assert_eq!(weights.len(), self.edges.len());
        let n = self.num_nodes();
        let mut degrees = vec![0.0; n];
        for (edge, &w) in self.edges.iter().zip(weights) {
            degrees[edge.a] += w;
            degrees[edge.b] += w;
        }
        let mut vals = vec![0.0; self.cols.len()];
        for (e, (edge, &w)) in self.edges.iter().zip(weights).enumerate() {
            let denom = degrees[edge.a] * degrees[edge.b];
            let v = if denom > 0.0 { w / denom.sqrt() } else { 0.0 };
            let (s1, s2) = self.slots[e];
            vals[s1] = v;
            vals[s2] = v;
        }
        NormalizedAdjacency {
            n,
            row_ptr: self.row_ptr.clone(),
            cols: self.cols.clone(),
            vals,
            degrees,
        }
    }
}

fn check(index: usize, limit: usize, what: &'static str) -> Result<()> {
    if index >= limit {
        Err(Error::IndexBounds { what, index, limit })
    } else {
        Ok(())
    }
}

/// Graph over the training edges plus `extra_edges`. `edge_weights`, when
/// given, covers the training edges followed by the extras.
pub fn build_graph(
    dataset: &Dataset,
    extra_edges: &[GraphEdge],
    edge_weights: Option<&[f64]>,
) -> Result<InteractionGraph> {
    let base: Vec<GraphEdge> = dataset
        .train()
        .iter()
        .map(|x| GraphEdge::UserItem {
            user: x.user,
            item: x.item,
        })
        .chain(extra_edges.iter().copied())
        .collect();
    if let Some(w) = edge_weights {
        if w.len() != base.len() {
            return Err(Error::Validation(format!(
                "{} weights for {} edges",
                w.len(),
                base.len()
            )));
        }
    }
    let weight = |e: usize| edge_weights.map_or(1.0, |w| w[e]);
    InteractionGraph::new(
        dataset.num_users(),
        dataset.num_items(),
        base.into_iter().enumerate().map(|(e, edge)| (edge, weight(e))),
    )
}
