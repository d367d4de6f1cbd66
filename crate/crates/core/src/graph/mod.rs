//! Attributed directed graphs and node permutations.
//!
//! Node identity is positional: node `i` is simply index `i`. Undirected
//! graphs are stored as symmetric directed edge sets.

mod fixture;

pub use fixture::{parse_graph, write_graph};

use std::collections::BTreeSet;
use std::fmt;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("edge ({0}, {1}) has an endpoint outside 0..{2}")]
    EndpointOutOfRange(usize, usize, usize),
    #[error("self-loop on node {0}")]
    SelfLoop(usize),
    #[error("expected {expected} attribute vectors, got {got}")]
    AttrCount { expected: usize, got: usize },
    #[error("ragged attributes: node {node} has dimension {got}, expected {expected}")]
    RaggedAttrs {
        node: usize,
        expected: usize,
        got: usize,
    },
    #[error("non-finite attribute value on node {0}")]
    NonFinite(usize),
    #[error("node {node} out of range for graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
    #[error("permutation over {perm} nodes applied to graph with {graph} nodes")]
    SizeMismatch { perm: usize, graph: usize },
    #[error("not a permutation: {0:?}")]
    NotBijection(Vec<usize>),
    #[error("graph is not symmetric: edge ({0}, {1}) has no reverse")]
    NotSymmetric(usize, usize),
    #[error("attribute dimensions differ: {0} vs {1}")]
    DimMismatch(usize, usize),
    #[error("fixture parse error on line {line}: {msg}")]
    Parse { line: usize, msg: String },
}

/// A directed graph on nodes `0..n` with one real attribute vector per node.
#[derive(Clone, PartialEq)]
pub struct AttributedGraph {
    n: usize,
    dim: usize,
    edges: BTreeSet<(usize, usize)>,
    attrs: Vec<Vec<f64>>,
    // in_adj[i] = sorted sources j of edges (j, i)
    in_adj: Vec<Vec<usize>>,
}

impl fmt::Debug for AttributedGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("AttributedGraph")
            .field("n", &self.n)
            .field("dim", &self.dim)
            .field("edges", &self.edges)
            .field("attrs", &self.attrs)
            .finish()
    }
}

impl AttributedGraph {
    /// Validates and builds a graph. Duplicate edges are collapsed.
    pub fn new(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        attrs: Vec<Vec<f64>>,
    ) -> Result<Self, GraphError> {
        if attrs.len() != n {
            return Err(GraphError::AttrCount {
                expected: n,
                got: attrs.len(),
            });
        }
        let dim = attrs.first().map_or(0, Vec::len);
        for (node, a) in attrs.iter().enumerate() {
            if a.len() != dim {
                return Err(GraphError::RaggedAttrs {
                    node,
                    expected: dim,
                    got: a.len(),
                });
            }
            if a.iter().any(|x| !x.is_finite()) {
                return Err(GraphError::NonFinite(node));
            }
        }
        let mut set = BTreeSet::new();
        for (i, j) in edges {
            if i >= n || j >= n {
                return Err(GraphError::EndpointOutOfRange(i, j, n));
            }
            if i == j {
                return Err(GraphError::SelfLoop(i));
            }
            set.insert((i, j));
        }
        Ok(Self::from_parts(n, dim, set, attrs))
    }

    /// Structure-only graph (attribute dimension 0).
    pub fn unlabeled(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
    ) -> Result<Self, GraphError> {
        Self::new(n, edges, vec![Vec::new(); n])
    }

    /// Graph with every node carrying the same attribute vector.
    pub fn uniform(
        n: usize,
        edges: impl IntoIterator<Item = (usize, usize)>,
        attr: &[f64],
    ) -> Result<Self, GraphError> {
        Self::new(n, edges, vec![attr.to_vec(); n])
    }

    /// Builds from undirected pairs, inserting both directions.
    pub fn undirected(
        n: usize,
        pairs: impl IntoIterator<Item = (usize, usize)>,
        attrs: Vec<Vec<f64>>,
    ) -> Result<Self, GraphError> {
        let both: Vec<_> = pairs
            .into_iter()
            .flat_map(|(a, b)| [(a, b), (b, a)])
            .collect();
        Self::new(n, both, attrs)
    }

    fn from_parts(
        n: usize,
        dim: usize,
        edges: BTreeSet<(usize, usize)>,
        attrs: Vec<Vec<f64>>,
    ) -> Self {
        let mut in_adj = vec![Vec::new(); n];
        for &(i, j) in &edges {
            in_adj[j].push(i);
        }
        for list in &mut in_adj {
            list.sort_unstable();
        }
        Self {
            n,
            dim,
            edges,
            attrs,
            in_adj,
        }
    }

    pub fn node_count(&self) -> usize {
        self.n
    }

    pub fn attr_dim(&self) -> usize {
        self.dim
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.edges.iter().copied()
    }

    pub fn edge_count(&self) -> usize {
        self.edges.len()
    }

    pub fn has_edge(&self, i: usize, j: usize) -> bool {
        self.edges.contains(&(i, j))
    }

    pub fn attrs(&self) -> &[Vec<f64>] {
        &self.attrs
    }

    pub fn attr(&self, i: usize) -> &[f64] {
        &self.attrs[i]
    }

    /// In-neighbors of `i`: every `j` with an edge `(j, i)`.
    pub fn neighbors(&self, i: usize) -> Result<&[usize], GraphError> {
        self.in_adj
            .get(i)
            .map(Vec::as_slice)
            .ok_or(GraphError::NodeOutOfRange { node: i, n: self.n })
    }

    /// In-neighbor lists for all nodes, indexed by node.
    pub fn in_adjacency(&self) -> &[Vec<usize>] {
        &self.in_adj
    }

    pub fn in_degree(&self, i: usize) -> usize {
        self.in_adj[i].len()
    }

    pub fn out_degree(&self, i: usize) -> usize {
        self.edges.range((i, 0)..(i + 1, 0)).count()
    }

    pub fn is_symmetric(&self) -> bool {
        self.edges
            .iter()
            .all(|&(i, j)| self.edges.contains(&(j, i)))
    }

    pub fn require_symmetric(&self) -> Result<(), GraphError> {
        match self
            .edges
            .iter()
            .find(|&&(i, j)| !self.edges.contains(&(j, i)))
        {
            Some(&(i, j)) => Err(GraphError::NotSymmetric(i, j)),
            None => Ok(()),
        }
    }

    /// Same structure with new attributes.
    pub fn with_attrs(&self, attrs: Vec<Vec<f64>>) -> Result<Self, GraphError> {
        Self::new(self.n, self.edges.iter().copied(), attrs)
    }

    /// Relabels nodes: node `σ(i)` of the output is node `i` of `self`.
    pub fn permute(&self, sigma: &NodePermutation) -> Result<Self, GraphError> {
        if sigma.len() != self.n {
            return Err(GraphError::SizeMismatch {
                perm: sigma.len(),
                graph: self.n,
            });
        }
        let edges = self
            .edges
            .iter()
            .map(|&(i, j)| (sigma.apply(i), sigma.apply(j)))
            .collect();
        let mut attrs = vec![Vec::new(); self.n];
        for (i, a) in self.attrs.iter().enumerate() {
            attrs[sigma.apply(i)] = a.clone();
        }
        Ok(Self::from_parts(self.n, self.dim, edges, attrs))
    }

    /// Disjoint union; nodes of `other` are shifted by `self.node_count()`.
    pub fn disjoint_union(&self, other: &Self) -> Result<Self, GraphError> {
        if self.n > 0 && other.n > 0 && self.dim != other.dim {
            return Err(GraphError::DimMismatch(self.dim, other.dim));
        }
        let shift = self.n;
        let edges = self
            .edges
            .iter()
            .copied()
            .chain(other.edges.iter().map(|&(i, j)| (i + shift, j + shift)))
            .collect();
        let attrs: Vec<_> = self.attrs.iter().chain(&other.attrs).cloned().collect();
        let dim = if self.n > 0 { self.dim } else { other.dim };
        Ok(Self::from_parts(self.n + other.n, dim, edges, attrs))
    }
}

/// A bijection on `0..n`, stored as `perm[i] = σ(i)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodePermutation(Vec<usize>);

impl NodePermutation {
    pub fn new(perm: Vec<usize>) -> Result<Self, GraphError> {
        let mut seen = vec![false; perm.len()];
        for &p in &perm {
            if p >= perm.len() || std::mem::replace(&mut seen[p], true) {
                return Err(GraphError::NotBijection(perm));
            }
        }
        Ok(Self(perm))
    }

    pub fn identity(n: usize) -> Self {
        Self((0..n).collect())
    }

    /// Transposition of `a` and `b` on `n` nodes.
    pub fn swap(n: usize, a: usize, b: usize) -> Self {
        let mut p: Vec<usize> = (0..n).collect();
        p.swap(a, b);
        Self(p)
    }

    pub fn random<R: rand::Rng + ?Sized>(n: usize, rng: &mut R) -> Self {
        use rand::seq::SliceRandom;
        let mut p: Vec<usize> = (0..n).collect();
        p.shuffle(rng);
        Self(p)
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn apply(&self, i: usize) -> usize {
        self.0[i]
    }

    pub fn as_slice(&self) -> &[usize] {
        &self.0
    }

    pub fn is_identity(&self) -> bool {
        self.0.iter().enumerate().all(|(i, &p)| i == p)
    }

    pub fn inverse(&self) -> Self {
        let mut inv = vec![0; self.0.len()];
        for (i, &p) in self.0.iter().enumerate() {
            inv[p] = i;
        }
        Self(inv)
    }

    /// `self ∘ other`, i.e. `i ↦ self(other(i))`.
    pub fn compose(&self, other: &Self) -> Self {
        Self(other.0.iter().map(|&j| self.0[j]).collect())
    }

    /// Moves per-node rows so that row `σ(i)` of the result is row `i` of `rows`.
    pub fn permute_rows<T: Clone>(&self, rows: &[T]) -> Vec<T> {
        let mut out: Vec<Option<T>> = vec![None; rows.len()];
        for (i, r) in rows.iter().enumerate() {
            out[self.0[i]] = Some(r.clone());
        }
        out.into_iter().map(|r| r.expect("bijection")).collect()
    }
}

/// Common small graphs used by tests, fixtures, and environments.
pub mod families {
    use super::AttributedGraph;

    pub fn cycle_edges(n: usize, offset: usize) -> Vec<(usize, usize)> {
        if n < 3 {
            return Vec::new();
        }
        (0..n).map(|i| (offset + i, offset + (i + 1) % n)).collect()
    }

    /// Undirected cycle with every attribute equal to `[0.0]`.
    pub fn cycle(n: usize) -> AttributedGraph {
        AttributedGraph::undirected(n, cycle_edges(n, 0), vec![vec![0.0]; n]).expect("valid cycle")
    }

    pub fn path(n: usize) -> AttributedGraph {
        let pairs: Vec<_> = (1..n).map(|i| (i - 1, i)).collect();
        AttributedGraph::undirected(n, pairs, vec![vec![0.0]; n]).expect("valid path")
    }

    pub fn complete(n: usize) -> AttributedGraph {
        let pairs: Vec<_> = (0..n)
            .flat_map(|i| (i + 1..n).map(move |j| (i, j)))
            .collect();
        AttributedGraph::undirected(n, pairs, vec![vec![0.0]; n]).expect("valid clique")
    }

    /// Two disjoint undirected cycles of length `k`.
    pub fn two_cycles(k: usize) -> AttributedGraph {
        let pairs: Vec<_> = cycle_edges(k, 0)
            .into_iter()
            .chain(cycle_edges(k, k))
            .collect();
        AttributedGraph::undirected(2 * k, pairs, vec![vec![0.0]; 2 * k]).expect("valid cycles")
    }
}
