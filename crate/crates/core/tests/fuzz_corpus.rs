//! Replays the checked-in fuzz seeds through the same checks the fuzz
//! targets make. Every seed is a valid input, so each must also parse.

use std::fs;
use std::path::PathBuf;

use gdnlab::constructions::parse_targets;
use gdnlab::envs::trace::parse_trace_line;
use gdnlab::gdn::{parse_checkpoint, write_checkpoint};
use gdnlab::graph::{parse_graph, write_graph};
use gdnlab::harness::{best_during_training, parse_override, MetricRecord, RunConfig, RunMeta};

fn seeds(target: &str) -> Vec<(String, String)> {
    let dir: PathBuf = [
        env!("CARGO_MANIFEST_DIR"),
        "..",
        "..",
        "fuzz",
        "corpus",
        target,
    ]
    .iter()
    .collect();
    let mut out: Vec<_> = fs::read_dir(&dir)
        .unwrap()
        .map(|e| e.unwrap().path())
        .map(|p| (p.display().to_string(), fs::read_to_string(&p).unwrap()))
        .collect();
    out.sort();
    assert!(!out.is_empty(), "no seeds in {}", dir.display());
    out
}

#[test]
fn graph_seeds_round_trip() {
    for (name, text) in seeds("graph_fixture") {
        let g = parse_graph(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert!(parse_graph(&write_graph(&g)).unwrap() == g, "{name}");
    }
}

#[test]
fn config_seeds_parse() {
    for (name, text) in seeds("run_config") {
        let (first, rest) = text.split_once('\n').unwrap_or((&text, ""));
        let (overrides, body): (Vec<String>, &str) = if first.contains('=') && !first.contains(' ')
        {
            (first.split(';').map(str::to_string).collect(), rest)
        } else {
            (Vec::new(), text.as_str())
        };
        for o in &overrides {
            parse_override(o).unwrap();
        }
        let cfg = RunConfig::parse(body, &overrides).unwrap_or_else(|e| panic!("{name}: {e}"));
        cfg.validate().unwrap();
    }
}

#[test]
fn checkpoint_seeds_round_trip() {
    for (name, text) in seeds("checkpoint") {
        let m = parse_checkpoint(&text).unwrap_or_else(|e| panic!("{name}: {e}"));
        assert_eq!(write_checkpoint(&m), text, "{name}");
        assert!(parse_checkpoint(&write_checkpoint(&m)).unwrap() == m);
    }
}

#[test]
fn target_trace_and_metric_seeds_parse() {
    for (name, text) in seeds("orbit_targets") {
        assert!(!parse_targets(&text)
            .unwrap_or_else(|e| panic!("{name}: {e}"))
            .is_empty());
    }
    for (name, text) in seeds("trace_line") {
        for line in text.lines() {
            parse_trace_line(line).unwrap_or_else(|e| panic!("{name}: {e}"));
        }
    }
    for (name, text) in seeds("metric_record") {
        if name.ends_with(".json") {
            serde_json::from_str::<RunMeta>(&text).unwrap();
        } else {
            let recs: Vec<MetricRecord> = text
                .lines()
                .map(|l| serde_json::from_str(l).unwrap())
                .collect();
            assert!(!best_during_training(&recs).unwrap().is_empty());
        }
    }
}

mod arbitrary_input {
    use super::*;
    use proptest::prelude::*;

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(512))]
        #[test]
        fn parsers_never_panic(text in "(?s).{0,200}", cut in 0usize..400, flip in any::<u8>()) {
            let _ = parse_graph(&text);
            let _ = parse_targets(&text);
            let _ = parse_trace_line(&text);
            let _ = parse_checkpoint(&text);
            let _ = RunConfig::parse(&text, &[text.clone()]);
            // damaged copies of real seeds reach deeper states
            for target in ["graph_fixture", "run_config", "checkpoint"] {
                for (_, seed) in seeds(target) {
                    let mut b = seed.into_bytes();
                    let k = cut % (b.len() + 1);
                    b.truncate(k.max(1));
                    if let Some(last) = b.last_mut() {
                        *last ^= flip;
                    }
                    let s = String::from_utf8_lossy(&b);
                    let _ = parse_graph(&s);
                    let _ = parse_checkpoint(&s);
                    let _ = RunConfig::parse(&s, &[]);
                }
            }
        }
    }
}
