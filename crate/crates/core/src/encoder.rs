//! Embedding tables and LightGCN propagation.
//!
//! Propagation is linear and, because the normalized bipartite adjacency is
//! symmetric, its adjoint is itself: the backward pass of [`propagate`] is
//! [`propagate`] applied to the upstream gradient.

use alloc::vec;
use alloc::vec::Vec;

use crate::corpus::{Dataset, SplitBundle};
use crate::error::{invalid, Result};
use crate::math;
use crate::rng;

/// User and item tables, row-major.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingState {
    pub num_users: usize,
    pub num_items: usize,
    pub dim: usize,
    pub users: Vec<f64>,
    pub items: Vec<f64>,
}

impl EmbeddingState {
    pub fn zeros(num_users: usize, num_items: usize, dim: usize) -> Self {
        Self {
            num_users,
            num_items,
            dim,
            users: vec![0.0; num_users * dim],
            items: vec![0.0; num_items * dim],
        }
    }

    /// Entries drawn from `N(0, std^2)`.
    pub fn random<R: rand::Rng>(
        num_users: usize,
        num_items: usize,
        dim: usize,
        std: f64,
        rng: &mut R,
    ) -> Self {
        let mut s = Self::zeros(num_users, num_items, dim);
        for x in s.users.iter_mut().chain(s.items.iter_mut()) {
            *x = std * rng::gaussian(rng);
        }
        s
    }

    pub fn user(&self, u: usize) -> &[f64] {
        &self.users[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item(&self, v: usize) -> &[f64] {
        &self.items[v * self.dim..(v + 1) * self.dim]
    }

    pub fn user_mut(&mut self, u: usize) -> &mut [f64] {
        &mut self.users[u * self.dim..(u + 1) * self.dim]
    }

    pub fn item_mut(&mut self, v: usize) -> &mut [f64] {
        &mut self.items[v * self.dim..(v + 1) * self.dim]
    }

    pub fn is_finite(&self) -> bool {
        self.users.iter().chain(&self.items).all(|x| x.is_finite())
    }

    /// Inner-product score `z_u . z_v`.
    pub fn score(&self, u: usize, v: usize) -> f64 {
        math::dot(self.user(u), self.item(v))
    }

    /// Scores of one user against every item.
    pub fn user_scores(&self, u: usize, out: &mut Vec<f64>) {
        out.clear();
        let zu = self.user(u);
        out.extend((0..self.num_items).map(|v| math::dot(zu, self.item(v))));
    }
}

/// Symmetrically normalized bipartite graph over train interactions.
#[derive(Debug, Clone, PartialEq)]
pub struct NormGraph {
    pub num_users: usize,
    pub num_items: usize,
    /// Unique (user, item) edges sorted ascending.
    pub edges: Vec<(usize, usize)>,
    /// `1 / sqrt(deg(u) * deg(v))` per edge.
    pub weights: Vec<f64>,
    pub user_degree: Vec<usize>,
    pub item_degree: Vec<usize>,
}

impl NormGraph {
    pub fn from_edges(
        num_users: usize,
        num_items: usize,
        mut edges: Vec<(usize, usize)>,
    ) -> Result<Self> {
        if edges.is_empty() {
            return Err(invalid("graph needs at least one train edge"));
        }
        edges.sort_unstable();
        edges.dedup();
        let mut user_degree = vec![0usize; num_users];
        let mut item_degree = vec![0usize; num_items];
        for &(u, v) in &edges {
            if u >= num_users || v >= num_items {
                return Err(invalid("edge index out of range"));
            }
            user_degree[u] += 1;
            item_degree[v] += 1;
        }
        let weights = edges
            .iter()
            .map(|&(u, v)| 1.0 / math::sqrt((user_degree[u] * item_degree[v]) as f64))
            .collect();
        Ok(Self {
            num_users,
            num_items,
            edges,
            weights,
            user_degree,
            item_degree,
        })
    }
}

/// Graph over the split's train interactions.
pub fn build_graph(dataset: &Dataset, split: &SplitBundle) -> Result<NormGraph> {
    let edges = split
        .train
        .iter()
        .map(|&i| {
            let r = split.interaction(dataset, i);
            (r.user, r.item)
        })
        .collect();
    NormGraph::from_edges(dataset.num_users(), dataset.num_items(), edges)
}

/// Mean of layers `0..=K` of LightGCN message passing. Nodes without edges
/// keep their input embedding.
pub fn propagate(state: &EmbeddingState, graph: &NormGraph, layers: usize) -> EmbeddingState {
    let d = state.dim;
    let mut acc = state.clone();
    if layers == 0 {
        return acc;
    }
    let mut prev = state.clone();
    let mut next = EmbeddingState::zeros(state.num_users, state.num_items, d);
    for _ in 0..layers {
        next.users.iter_mut().for_each(|x| *x = 0.0);
        next.items.iter_mut().for_each(|x| *x = 0.0);
        for (&(u, v), &w) in graph.edges.iter().zip(&graph.weights) {
            math::axpy(
                w,
                &prev.items[v * d..(v + 1) * d],
                &mut next.users[u * d..(u + 1) * d],
            );
            math::axpy(
                w,
                &prev.users[u * d..(u + 1) * d],
                &mut next.items[v * d..(v + 1) * d],
            );
        }
        for (a, x) in acc.users.iter_mut().zip(&next.users) {
            *a += x;
        }
        for (a, x) in acc.items.iter_mut().zip(&next.items) {
            *a += x;
        }
        core::mem::swap(&mut prev, &mut next);
    }
    let scale = 1.0 / (layers + 1) as f64;
    for (u, &deg) in graph.user_degree.iter().enumerate() {
        if deg > 0 {
            acc.users[u * d..(u + 1) * d]
                .iter_mut()
                .for_each(|x| *x *= scale);
        }
    }
    for (v, &deg) in graph.item_degree.iter().enumerate() {
        if deg > 0 {
            acc.items[v * d..(v + 1) * d]
                .iter_mut()
                .for_each(|x| *x *= scale);
        }
    }
    acc
}

/// Gradient of a scalar loss with respect to the input tables, given its
/// gradient with respect to the propagated tables. The propagation operator
/// is symmetric, so this is propagation of the upstream gradient.
pub fn propagate_backward(
    upstream: &EmbeddingState,
    graph: &NormGraph,
    layers: usize,
) -> EmbeddingState {
    propagate(upstream, graph, layers)
}
