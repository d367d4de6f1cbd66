//! 1-dimensional Weisfeiler-Leman color refinement.
//!
//! Round 0 colors nodes by exact attribute equality. Each later round
//! recolors node `i` by the key `(color(i), sorted colors of in-neighbors)`,
//! and keys are sorted lexicographically to produce contiguous, deterministic
//! color ids. Refinement stops once the partition no longer splits.

use std::cmp::Ordering;
use std::collections::BTreeMap;

use crate::graph::AttributedGraph;

/// Color assignment after a given refinement round.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Coloring {
    pub colors: Vec<usize>,
    pub round: usize,
}

impl Coloring {
    pub fn class_count(&self) -> usize {
        self.colors.iter().max().map_or(0, |&m| m + 1)
    }

    /// Sorted `(color, count)` pairs.
    pub fn histogram(&self) -> Vec<(usize, usize)> {
        histogram(&self.colors)
    }

    /// Node sets per color, ordered by color id.
    pub fn classes(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.class_count()];
        for (i, &c) in self.colors.iter().enumerate() {
            out[c].push(i);
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefinementTrace {
    /// One coloring per round, `rounds[t].round == t`.
    pub rounds: Vec<Coloring>,
    pub histograms: Vec<Vec<(usize, usize)>>,
    /// First round whose partition equals the next round's.
    pub stable_round: usize,
}

impl RefinementTrace {
    pub fn stable(&self) -> &Coloring {
        &self.rounds[self.stable_round]
    }
}

fn histogram(colors: &[usize]) -> Vec<(usize, usize)> {
    let mut counts = BTreeMap::new();
    for &c in colors {
        *counts.entry(c).or_insert(0usize) += 1;
    }
    counts.into_iter().collect()
}

fn cmp_attr(a: &[f64], b: &[f64]) -> Ordering {
    // +0.0 normalizes -0.0 so that exact equality and ordering agree
    a.iter()
        .map(|x| x + 0.0)
        .zip(b.iter().map(|x| x + 0.0))
        .map(|(x, y)| x.total_cmp(&y))
        .find(|o| o.is_ne())
        .unwrap_or_else(|| a.len().cmp(&b.len()))
}

/// Round-0 colors: contiguous ids over attribute vectors sorted lexicographically.
pub fn initial_colors(g: &AttributedGraph) -> Vec<usize> {
    let mut order: Vec<usize> = (0..g.node_count()).collect();
    order.sort_by(|&a, &b| cmp_attr(g.attr(a), g.attr(b)));
    let mut colors = vec![0; g.node_count()];
    let mut next = 0;
    for (k, &node) in order.iter().enumerate() {
        if k > 0 && cmp_attr(g.attr(order[k - 1]), g.attr(node)).is_ne() {
            next += 1;
        }
        colors[node] = next;
    }
    colors
}

/// One refinement round.
pub fn refine_once(g: &AttributedGraph, colors: &[usize]) -> Vec<usize> {
    let keys: Vec<(usize, Vec<usize>)> = (0..g.node_count())
        .map(|i| {
            let mut nb: Vec<usize> = g.in_adjacency()[i].iter().map(|&j| colors[j]).collect();
            nb.sort_unstable();
            (colors[i], nb)
        })
        .collect();
    let mut distinct: Vec<&(usize, Vec<usize>)> = keys.iter().collect();
    distinct.sort();
    distinct.dedup();
    keys.iter()
        .map(|k| distinct.binary_search(&k).expect("key present"))
        .collect()
}

fn class_count(colors: &[usize]) -> usize {
    colors.iter().max().map_or(0, |&m| m + 1)
}

/// Runs refinement to stabilization (at most `n` rounds past round 0).
pub fn wl_refine(g: &AttributedGraph) -> RefinementTrace {
    let mut colors = initial_colors(g);
    let mut rounds = vec![Coloring {
        colors: colors.clone(),
        round: 0,
    }];
    let mut stable_round = 0;
    for round in 1..=g.node_count().max(1) {
        let next = refine_once(g, &colors);
        // the own color is part of the key, so a split is the only possible change
        if class_count(&next) == class_count(&colors) {
            stable_round = round - 1;
            break;
        }
        colors = next;
        rounds.push(Coloring {
            colors: colors.clone(),
            round,
        });
        stable_round = round;
    }
    let histograms = rounds.iter().map(Coloring::histogram).collect();
    RefinementTrace {
        rounds,
        histograms,
        stable_round,
    }
}

/// Stable WL coloring (convenience for pruning searches).
pub fn stable_colors(g: &AttributedGraph) -> Vec<usize> {
    let mut t = wl_refine(g);
    let r = t.stable_round;
    std::mem::take(&mut t.rounds[r].colors)
}

/// Joint refinement on the disjoint union of two graphs. Returns the per-round
/// colorings split back into `(left, right)` halves.
pub fn joint_refine(
    g1: &AttributedGraph,
    g2: &AttributedGraph,
) -> Option<Vec<(Vec<usize>, Vec<usize>)>> {
    let union = g1.disjoint_union(g2).ok()?;
    let split = g1.node_count();
    let trace = wl_refine(&union);
    Some(
        trace
            .rounds
            .into_iter()
            .map(|c| {
                let (a, b) = c.colors.split_at(split);
                (a.to_vec(), b.to_vec())
            })
            .collect(),
    )
}

/// True iff 1-WL cannot tell the graphs apart.
pub fn wl_indistinguishable(g1: &AttributedGraph, g2: &AttributedGraph) -> bool {
    if g1.node_count() != g2.node_count() {
        return false;
    }
    if g1.node_count() == 0 {
        return true;
    }
    let Some(rounds) = joint_refine(g1, g2) else {
        return false;
    };
    rounds.iter().all(|(a, b)| histogram(a) == histogram(b))
}
