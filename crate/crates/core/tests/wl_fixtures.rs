use std::collections::HashMap;
use std::path::PathBuf;

use gdnlab::graph::{families, parse_graph, AttributedGraph, NodePermutation};
use gdnlab::orbits::are_isomorphic;
use gdnlab::wl::wl_indistinguishable;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn fixture_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("fixtures/wl")
}

fn load(name: &str) -> AttributedGraph {
    let text = std::fs::read_to_string(fixture_dir().join(format!("{name}.graph"))).unwrap();
    parse_graph(&text).unwrap()
}

fn manifest() -> Vec<(String, String, bool)> {
    std::fs::read_to_string(fixture_dir().join("manifest.txt"))
        .unwrap()
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|l| {
            let f: Vec<&str> = l.split_whitespace().collect();
            (f[0].to_string(), f[1].to_string(), f[2] == "blind")
        })
        .collect()
}

/// Refinement with interned string signatures shared by both graphs,
/// compared round by round for `n` rounds.
fn naive_indistinguishable(a: &AttributedGraph, b: &AttributedGraph) -> bool {
    if a.node_count() != b.node_count() {
        return false;
    }
    let mut dict: HashMap<String, usize> = HashMap::new();
    let mut intern = |s: String| {
        let k = dict.len();
        *dict.entry(s).or_insert(k)
    };
    let init = |g: &AttributedGraph, intern: &mut dyn FnMut(String) -> usize| -> Vec<usize> {
        (0..g.node_count())
            .map(|i| {
                intern(format!(
                    "{:?}",
                    g.attr(i).iter().map(|x| x + 0.0).collect::<Vec<_>>()
                ))
            })
            .collect()
    };
    let mut ca = init(a, &mut intern);
    let mut cb = init(b, &mut intern);
    for _ in 0..=a.node_count() {
        let hist = |c: &[usize]| {
            let mut h = c.to_vec();
            h.sort();
            h
        };
        if hist(&ca) != hist(&cb) {
            return false;
        }
        let step = |g: &AttributedGraph,
                    c: &[usize],
                    intern: &mut dyn FnMut(String) -> usize|
         -> Vec<usize> {
            (0..g.node_count())
                .map(|i| {
                    let mut nb: Vec<usize> = (0..g.node_count())
                        .filter(|&j| g.in_adjacency()[i].contains(&j))
                        .map(|j| c[j])
                        .collect();
                    nb.sort();
                    intern(format!("{}|{:?}", c[i], nb))
                })
                .collect()
        };
        let na = step(a, &ca, &mut intern);
        let nb = step(b, &cb, &mut intern);
        ca = na;
        cb = nb;
    }
    true
}

fn random_graph(rng: &mut ChaCha8Rng, n: usize) -> AttributedGraph {
    let directed = rng.random_bool(0.3);
    let p = rng.random_range(0.2..0.7);
    let mut edges = Vec::new();
    for i in 0..n {
        for j in 0..n {
            if i == j || (!directed && j < i) {
                continue;
            }
            if rng.random_bool(p) {
                edges.push((i, j));
                if !directed {
                    edges.push((j, i));
                }
            }
        }
    }
    let colors = rng.random_range(1..3);
    let attrs = (0..n)
        .map(|_| vec![f64::from(rng.random_range(0..colors))])
        .collect();
    AttributedGraph::new(n, edges, attrs).unwrap()
}

#[test]
fn manifest_expectations_hold() {
    let m = manifest();
    assert!(m
        .iter()
        .any(|(a, b, blind)| a == "c8" && b == "two_c4" && *blind));
    for (a, b, blind) in &m {
        let (ga, gb) = (load(a), load(b));
        assert_eq!(wl_indistinguishable(&ga, &gb), *blind, "{a} vs {b}");
        if *blind {
            assert!(
                !are_isomorphic(&ga, &gb).unwrap(),
                "{a} vs {b} should not be isomorphic"
            );
        }
    }
}

#[test]
fn fixtures_match_builders() {
    let same = |a: &AttributedGraph, b: &AttributedGraph| {
        a.node_count() == b.node_count()
            && a.edges().collect::<Vec<_>>() == b.edges().collect::<Vec<_>>()
    };
    assert!(same(&load("c8"), &families::cycle(8)));
    assert!(same(&load("two_c4"), &families::two_cycles(4)));
    assert!(same(&load("k3"), &families::complete(3)));
    assert!(same(&load("p3"), &families::path(3)));
}

#[test]
fn agrees_with_naive_refinement() {
    for (a, b, _) in manifest() {
        let (ga, gb) = (load(&a), load(&b));
        assert_eq!(
            wl_indistinguishable(&ga, &gb),
            naive_indistinguishable(&ga, &gb),
            "{a} vs {b}"
        );
    }
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut blind_pairs = 0;
    for _ in 0..3000 {
        let n = rng.random_range(1..=6);
        let a = random_graph(&mut rng, n);
        // relabel a copy half the time so isomorphic pairs are well represented
        let b = if rng.random_bool(0.5) {
            a.permute(&NodePermutation::random(n, &mut rng)).unwrap()
        } else {
            random_graph(&mut rng, n)
        };
        let fast = wl_indistinguishable(&a, &b);
        assert_eq!(fast, naive_indistinguishable(&a, &b));
        if are_isomorphic(&a, &b).unwrap() {
            assert!(fast);
        } else if fast {
            blind_pairs += 1;
        }
    }
    assert!(blind_pairs > 0, "sample should contain WL-blind pairs");
}
