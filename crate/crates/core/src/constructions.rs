//! Exact symbolic versions of the orbit-labelling procedures: every node of an
//! orbit receives a distinct element of that orbit's target multiset.
//!
//! Each node carries a ledger entry `(tie_break, orbit, counter, label)`. For
//! `n` rounds a global readout picks the node with the largest tie-break
//! value. That node takes element `counter` of its orbit's target sequence
//! and drops its tie-break to zero; every other node of the same orbit bumps
//! its counter. Tie-break values are uniform noise (RNI mode) or the agent
//! index (unique-ID mode, highest index first).

use rand::Rng;
use thiserror::Error;

use crate::graph::AttributedGraph;
use crate::orbits::{self, OrbitError, OrbitPartition};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ConstructionError {
    #[error("expected targets for {expected} orbits, got {got}")]
    OrbitCount { expected: usize, got: usize },
    #[error("orbit {orbit} has {size} nodes but {targets} targets")]
    TargetSize {
        orbit: usize,
        size: usize,
        targets: usize,
    },
    #[error("tie-break values must be positive, finite, and pairwise distinct")]
    TieBreak,
    #[error("expected {expected} tie-break values, got {got}")]
    TieBreakCount { expected: usize, got: usize },
    #[error("non-finite target label")]
    NonFinite,
    #[error("vector targets must all have the same width")]
    RaggedVectors,
    #[error(transparent)]
    Orbit(#[from] OrbitError),
}

/// Per-orbit target sequences; `targets[k]` is used in order by orbit `k`.
#[derive(Debug, Clone, PartialEq)]
pub struct OrbitTargets<T = f64> {
    per_orbit: Vec<Vec<T>>,
}

impl<T: Clone> OrbitTargets<T> {
    pub fn new(per_orbit: Vec<Vec<T>>) -> Self {
        Self { per_orbit }
    }

    pub fn orbit(&self, k: usize) -> &[T] {
        &self.per_orbit[k]
    }

    pub fn len(&self) -> usize {
        self.per_orbit.len()
    }

    pub fn is_empty(&self) -> bool {
        self.per_orbit.is_empty()
    }

    pub fn check(&self, partition: &OrbitPartition) -> Result<(), ConstructionError> {
        if self.per_orbit.len() != partition.len() {
            return Err(ConstructionError::OrbitCount {
                expected: partition.len(),
                got: self.per_orbit.len(),
            });
        }
        for (orbit, (t, o)) in self.per_orbit.iter().zip(&partition.orbits).enumerate() {
            if t.len() != o.len() {
                return Err(ConstructionError::TargetSize {
                    orbit,
                    size: o.len(),
                    targets: t.len(),
                });
            }
        }
        Ok(())
    }
}

impl OrbitTargets<f64> {
    /// Random integer-valued targets, handy for property tests.
    pub fn random<R: Rng + ?Sized>(partition: &OrbitPartition, rng: &mut R) -> Self {
        Self::new(
            partition
                .orbits
                .iter()
                .map(|o| {
                    o.iter()
                        .map(|_| f64::from(rng.random_range(-5i8..=5)))
                        .collect()
                })
                .collect(),
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LedgerEntry {
    pub tie_break: f64,
    pub orbit: usize,
    pub counter: usize,
    /// Index into the orbit's target sequence, once claimed.
    pub claimed: Option<usize>,
}

/// Final ledger plus the node claimed in each round.
#[derive(Debug, Clone, PartialEq)]
pub struct NodeLedger {
    pub entries: Vec<LedgerEntry>,
    pub claim_order: Vec<usize>,
}

/// Runs the `n` claim rounds on explicit tie-break values.
pub fn run_claims(
    partition: &OrbitPartition,
    tie_break: &[f64],
) -> Result<NodeLedger, ConstructionError> {
    let n = partition.orbit_of.len();
    if tie_break.len() != n {
        return Err(ConstructionError::TieBreakCount {
            expected: n,
            got: tie_break.len(),
        });
    }
    if !tie_breaks_valid(tie_break) {
        return Err(ConstructionError::TieBreak);
    }
    let mut entries: Vec<LedgerEntry> = (0..n)
        .map(|i| LedgerEntry {
            tie_break: tie_break[i],
            orbit: partition.orbit_of[i],
            counter: 0,
            claimed: None,
        })
        .collect();
    let mut claim_order = Vec::with_capacity(n);
    for _ in 0..n {
        // global readout: argmax of the tie-break values
        let winner = (0..n)
            .max_by(|&a, &b| entries[a].tie_break.total_cmp(&entries[b].tie_break))
            .expect("n > 0 inside loop");
        let (w_orbit, w_tie) = (entries[winner].orbit, entries[winner].tie_break);
        for e in &mut entries {
            if e.orbit != w_orbit {
                continue;
            }
            if e.tie_break == w_tie {
                e.tie_break = 0.0;
                e.claimed = Some(e.counter);
            }
            e.counter += 1;
        }
        claim_order.push(winner);
    }
    Ok(NodeLedger {
        entries,
        claim_order,
    })
}

fn tie_breaks_valid(t: &[f64]) -> bool {
    if t.iter().any(|x| !x.is_finite() || *x <= 0.0) {
        return false;
    }
    let mut s = t.to_vec();
    s.sort_by(f64::total_cmp);
    s.windows(2).all(|w| w[0] != w[1])
}

/// Labels per node from a finished ledger.
pub fn extract_labels<T: Clone>(ledger: &NodeLedger, targets: &OrbitTargets<T>) -> Vec<T> {
    ledger
        .entries
        .iter()
        .map(|e| targets.orbit(e.orbit)[e.claimed.expect("every node claims once")].clone())
        .collect()
}

fn prepare<T: Clone>(
    g: &AttributedGraph,
    targets: &OrbitTargets<T>,
) -> Result<OrbitPartition, ConstructionError> {
    let p = orbits::orbit_partition(g)?;
    targets.check(&p)?;
    Ok(p)
}

/// Samples tie-break noise on `(0, 1)`, resampling on the measure-zero tie event.
pub fn sample_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..n).map(|_| rng.random::<f64>()).collect();
        if tie_breaks_valid(&v) {
            return v;
        }
    }
}

/// Deterministic core of the RNI procedure given its noise.
pub fn assign_labels_with_noise<T: Clone>(
    g: &AttributedGraph,
    targets: &OrbitTargets<T>,
    noise: &[f64],
) -> Result<Vec<T>, ConstructionError> {
    let p = prepare(g, targets)?;
    let ledger = run_claims(&p, noise)?;
    Ok(extract_labels(&ledger, targets))
}

pub fn assign_labels_rni<R: Rng + ?Sized>(
    g: &AttributedGraph,
    targets: &OrbitTargets,
    rng: &mut R,
) -> Result<Vec<f64>, ConstructionError> {
    check_finite(targets)?;
    let noise = sample_noise(g.node_count(), rng);
    assign_labels_with_noise(g, targets, &noise)
}

/// Unique-ID variant: the tie-break of agent `i` is `i + 1`.
pub fn assign_labels_uid(
    g: &AttributedGraph,
    targets: &OrbitTargets,
) -> Result<Vec<f64>, ConstructionError> {
    check_finite(targets)?;
    let ids: Vec<f64> = (1..=g.node_count()).map(|i| i as f64).collect();
    assign_labels_with_noise(g, targets, &ids)
}

/// Vector-valued targets; all components share one claim order.
pub fn assign_vector_labels_rni<R: Rng + ?Sized>(
    g: &AttributedGraph,
    targets: &OrbitTargets<Vec<f64>>,
    rng: &mut R,
) -> Result<Vec<Vec<f64>>, ConstructionError> {
    let width = targets
        .per_orbit
        .iter()
        .flatten()
        .map(Vec::len)
        .next()
        .unwrap_or(0);
    if targets.per_orbit.iter().flatten().any(|v| v.len() != width) {
        return Err(ConstructionError::RaggedVectors);
    }
    if targets
        .per_orbit
        .iter()
        .flatten()
        .flatten()
        .any(|x| !x.is_finite())
    {
        return Err(ConstructionError::NonFinite);
    }
    let noise = sample_noise(g.node_count(), rng);
    assign_labels_with_noise(g, targets, &noise)
}

fn check_finite(t: &OrbitTargets) -> Result<(), ConstructionError> {
    if t.per_orbit.iter().flatten().all(|x| x.is_finite()) {
        Ok(())
    } else {
        Err(ConstructionError::NonFinite)
    }
}

/// `|A| = |B|` and, after sorting both, every matched pair is within `eps`.
pub fn multiset_eps_equal(a: &[f64], b: &[f64], eps: f64) -> bool {
    if a.len() != b.len() {
        return false;
    }
    let mut a = a.to_vec();
    let mut b = b.to_vec();
    a.sort_by(f64::total_cmp);
    b.sort_by(f64::total_cmp);
    a.iter().zip(&b).all(|(x, y)| (x - y).abs() <= eps)
}

/// Parses a targets file: one line of whitespace-separated reals per orbit,
/// in orbit-id order. Blank lines and `#` comments are skipped.
pub fn parse_targets(text: &str) -> Result<OrbitTargets, String> {
    let mut out = Vec::new();
    for (k, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let row = line
            .split_whitespace()
            .map(|t| {
                t.parse::<f64>()
                    .ok()
                    .filter(|x| x.is_finite())
                    .ok_or_else(|| format!("line {}: bad target `{t}`", k + 1))
            })
            .collect::<Result<Vec<_>, _>>()?;
        out.push(row);
    }
    Ok(OrbitTargets::new(out))
}
