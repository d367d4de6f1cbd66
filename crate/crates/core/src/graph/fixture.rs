//! Plain-text graph fixtures.
//!
//! ```text
//! n d
//! <d reals>        (n lines, omitted when d = 0)
//! i j              (one line per directed edge)
//! ```
//!
//! Blank lines and lines starting with `#` are ignored.

use std::fmt::Write as _;

use super::{AttributedGraph, GraphError};

fn parse_err(line: usize, msg: impl Into<String>) -> GraphError {
    GraphError::Parse {
        line,
        msg: msg.into(),
    }
}

/// Upper bound on node count accepted from text, keeps hostile input from
/// allocating unbounded attribute tables.
pub const MAX_FIXTURE_NODES: usize = 1 << 16;

pub fn parse_graph(text: &str) -> Result<AttributedGraph, GraphError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(k, l)| (k + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (hline, header) = lines.next().ok_or_else(|| parse_err(0, "missing header"))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    if head.len() != 2 {
        return Err(parse_err(hline, "header must be `n d`"));
    }
    let n: usize = head[0]
        .parse()
        .map_err(|_| parse_err(hline, "bad node count"))?;
    let d: usize = head[1]
        .parse()
        .map_err(|_| parse_err(hline, "bad attribute dimension"))?;
    if n > MAX_FIXTURE_NODES || d > MAX_FIXTURE_NODES {
        return Err(parse_err(hline, "fixture too large"));
    }

    let mut attrs = Vec::with_capacity(n);
    if d == 0 {
        attrs.resize(n, Vec::new());
    } else {
        for node in 0..n {
            let (k, l) = lines
                .next()
                .ok_or_else(|| parse_err(0, format!("missing attributes for node {node}")))?;
            let row = l
                .split_whitespace()
                .map(|t| {
                    t.parse::<f64>()
                        .map_err(|_| parse_err(k, format!("bad real `{t}`")))
                })
                .collect::<Result<Vec<_>, _>>()?;
            if row.len() != d {
                return Err(parse_err(
                    k,
                    format!("expected {d} attributes, got {}", row.len()),
                ));
            }
            attrs.push(row);
        }
    }

    let mut edges = Vec::new();
    for (k, l) in lines {
        let mut it = l.split_whitespace();
        let mut next = || -> Result<usize, GraphError> {
            it.next()
                .ok_or_else(|| parse_err(k, "edge line must be `i j`"))?
                .parse()
                .map_err(|_| parse_err(k, "bad node index"))
        };
        let (i, j) = (next()?, next()?);
        if it.next().is_some() {
            return Err(parse_err(k, "edge line must be `i j`"));
        }
        edges.push((i, j));
    }
    AttributedGraph::new(n, edges, attrs)
}

pub fn write_graph(g: &AttributedGraph) -> String {
    let mut out = format!("{} {}\n", g.node_count(), g.attr_dim());
    if g.attr_dim() > 0 {
        for a in g.attrs() {
            let row: Vec<String> = a.iter().map(|x| format!("{x:?}")).collect();
            out.push_str(&row.join(" "));
            out.push('\n');
        }
    }
    for (i, j) in g.edges() {
        let _ = writeln!(out, "{i} {j}");
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::families;

    #[test]
    fn round_trip_cycle() {
        let g = families::cycle(8);
        let text = write_graph(&g);
        assert_eq!(parse_graph(&text).unwrap(), g);
    }

    #[test]
    fn structure_only() {
        let g = parse_graph("# triangle\n3 0\n0 1\n1 2\n\n2 0\n").unwrap();
        assert_eq!(g.attr_dim(), 0);
        assert_eq!(g.edge_count(), 3);
    }

    #[test]
    fn exact_reals_survive() {
        let g = AttributedGraph::new(1, [], vec![vec![0.1 + 0.2, -0.0, 1e-300]]).unwrap();
        let h = parse_graph(&write_graph(&g)).unwrap();
        let bits = |g: &AttributedGraph| g.attr(0).iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&g), bits(&h));
    }

    #[test]
    fn errors_carry_line_numbers() {
        assert!(matches!(parse_graph(""), Err(GraphError::Parse { .. })));
        assert!(matches!(
            parse_graph("2 1\n1.0\nx\n"),
            Err(GraphError::Parse { line: 3, .. })
        ));
        assert!(matches!(
            parse_graph("2 0\n0 1 2\n"),
            Err(GraphError::Parse { line: 2, .. })
        ));
        assert!(matches!(
            parse_graph("2 0\n0 5\n"),
            Err(GraphError::EndpointOutOfRange(0, 5, 2))
        ));
        assert!(matches!(
            parse_graph("1 1\nNaN\n"),
            Err(GraphError::NonFinite(0))
        ));
    }
}
