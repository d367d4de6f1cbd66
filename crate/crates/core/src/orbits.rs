//! Exact automorphism groups and orbits of small attributed graphs.
//!
//! Brute-force backtracking over node maps, pruned by the stable WL coloring:
//! an automorphism can only map a node within its own color class.

use thiserror::Error;

use crate::graph::{AttributedGraph, NodePermutation};
use crate::wl;

/// Largest graph the brute-force search accepts.
pub const MAX_NODES: usize = 10;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum OrbitError {
    #[error("graph has {0} nodes; brute-force budget is {MAX_NODES}")]
    BudgetExceeded(usize),
    #[error("node {node} out of range for graph with {n} nodes")]
    NodeOutOfRange { node: usize, n: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct OrbitPartition {
    /// Orbit id per node; ids are ordered by each orbit's smallest member.
    pub orbit_of: Vec<usize>,
    pub orbits: Vec<Vec<usize>>,
}

impl OrbitPartition {
    pub fn len(&self) -> usize {
        self.orbits.len()
    }

    pub fn is_empty(&self) -> bool {
        self.orbits.is_empty()
    }

    pub fn is_trivial(&self) -> bool {
        self.orbits.iter().all(|o| o.len() == 1)
    }
}

fn check_budget(g: &AttributedGraph) -> Result<(), OrbitError> {
    if g.node_count() > MAX_NODES {
        Err(OrbitError::BudgetExceeded(g.node_count()))
    } else {
        Ok(())
    }
}

/// Backtracking search for structure-preserving maps from `a` to `b`.
struct Matcher<'a> {
    a: &'a AttributedGraph,
    b: &'a AttributedGraph,
    color_a: Vec<usize>,
    color_b: Vec<usize>,
    order: Vec<usize>,
    map: Vec<usize>,
    used: Vec<bool>,
}

impl<'a> Matcher<'a> {
    fn new(
        a: &'a AttributedGraph,
        b: &'a AttributedGraph,
        color_a: Vec<usize>,
        color_b: Vec<usize>,
    ) -> Self {
        let n = a.node_count();
        Self {
            a,
            b,
            color_a,
            color_b,
            order: (0..n).collect(),
            map: vec![usize::MAX; n],
            used: vec![false; n],
        }
    }

    fn fix_first(&mut self, from: usize) {
        self.order.retain(|&x| x != from);
        self.order.insert(0, from);
    }

    fn consistent(&self, depth: usize, u: usize, v: usize) -> bool {
        if self.color_a[u] != self.color_b[v] || self.a.attr(u) != self.b.attr(v) {
            return false;
        }
        self.order[..depth].iter().all(|&w| {
            let x = self.map[w];
            self.a.has_edge(u, w) == self.b.has_edge(v, x)
                && self.a.has_edge(w, u) == self.b.has_edge(x, v)
        })
    }

    /// Visits complete maps; the visitor returns `false` to stop the search.
    fn search(
        &mut self,
        depth: usize,
        forced: Option<(usize, usize)>,
        visit: &mut dyn FnMut(&[usize]) -> bool,
    ) -> bool {
        let n = self.order.len();
        if depth == n {
            return visit(&self.map);
        }
        let u = self.order[depth];
        for v in 0..n {
            if let Some((fu, fv)) = forced {
                if fu == u && fv != v {
                    continue;
                }
            }
            if self.used[v] || !self.consistent(depth, u, v) {
                continue;
            }
            self.map[u] = v;
            self.used[v] = true;
            let go_on = self.search(depth + 1, forced, visit);
            self.used[v] = false;
            self.map[u] = usize::MAX;
            if !go_on {
                return false;
            }
        }
        true
    }
}

/// Calls `visit` on every automorphism. Stops early if `visit` returns `false`.
pub fn for_each_automorphism(
    g: &AttributedGraph,
    mut visit: impl FnMut(&NodePermutation) -> bool,
) -> Result<(), OrbitError> {
    check_budget(g)?;
    let colors = wl::stable_colors(g);
    let mut m = Matcher::new(g, g, colors.clone(), colors);
    m.search(0, None, &mut |map| {
        visit(&NodePermutation::new(map.to_vec()).expect("bijection"))
    });
    Ok(())
}

/// Every automorphism of `g`, including attribute preservation.
pub fn automorphisms(g: &AttributedGraph) -> Result<Vec<NodePermutation>, OrbitError> {
    let mut out = Vec::new();
    for_each_automorphism(g, |p| {
        out.push(p.clone());
        true
    })?;
    Ok(out)
}

pub fn automorphism_count(g: &AttributedGraph) -> Result<usize, OrbitError> {
    let mut count = 0;
    for_each_automorphism(g, |_| {
        count += 1;
        true
    })?;
    Ok(count)
}

/// Some automorphism mapping `from` to `to`, if one exists.
pub fn automorphism_mapping(
    g: &AttributedGraph,
    from: usize,
    to: usize,
) -> Result<Option<NodePermutation>, OrbitError> {
    check_budget(g)?;
    let n = g.node_count();
    for node in [from, to] {
        if node >= n {
            return Err(OrbitError::NodeOutOfRange { node, n });
        }
    }
    let colors = wl::stable_colors(g);
    let mut m = Matcher::new(g, g, colors.clone(), colors);
    m.fix_first(from);
    let mut found = None;
    m.search(0, Some((from, to)), &mut |map| {
        found = Some(NodePermutation::new(map.to_vec()).expect("bijection"));
        false
    });
    Ok(found)
}

/// Partition of nodes into automorphism orbits.
pub fn orbit_partition(g: &AttributedGraph) -> Result<OrbitPartition, OrbitError> {
    check_budget(g)?;
    let n = g.node_count();
    let colors = wl::stable_colors(g);
    let mut orbit_of: Vec<usize> = vec![usize::MAX; n];
    let mut orbits: Vec<Vec<usize>> = Vec::new();
    for i in 0..n {
        if orbit_of[i] != usize::MAX {
            continue;
        }
        let id = orbits.len();
        orbit_of[i] = id;
        let mut members = vec![i];
        for j in i + 1..n {
            if orbit_of[j] == usize::MAX
                && colors[j] == colors[i]
                && automorphism_mapping(g, i, j)?.is_some()
            {
                orbit_of[j] = id;
                members.push(j);
            }
        }
        orbits.push(members);
    }
    Ok(OrbitPartition { orbit_of, orbits })
}

/// True iff some automorphism maps `i` to `j`.
pub fn are_similar(g: &AttributedGraph, i: usize, j: usize) -> Result<bool, OrbitError> {
    Ok(automorphism_mapping(g, i, j)?.is_some())
}

/// A permutation `σ` with `a.permute(σ) == b`, if the graphs are isomorphic.
pub fn find_isomorphism(
    a: &AttributedGraph,
    b: &AttributedGraph,
) -> Result<Option<NodePermutation>, OrbitError> {
    check_budget(a)?;
    check_budget(b)?;
    if a.node_count() != b.node_count() || a.edge_count() != b.edge_count() {
        return Ok(None);
    }
    if a.node_count() > 0 && a.attr_dim() != b.attr_dim() {
        return Ok(None);
    }
    let Some(rounds) = wl::joint_refine(a, b) else {
        return Ok(None);
    };
    let (ca, cb) = rounds.into_iter().last().expect("round 0 exists");
    let mut m = Matcher::new(a, b, ca, cb);
    let mut found = None;
    m.search(0, None, &mut |map| {
        found = Some(NodePermutation::new(map.to_vec()).expect("bijection"));
        false
    });
    Ok(found)
}

pub fn are_isomorphic(a: &AttributedGraph, b: &AttributedGraph) -> Result<bool, OrbitError> {
    Ok(find_isomorphism(a, b)?.is_some())
}
