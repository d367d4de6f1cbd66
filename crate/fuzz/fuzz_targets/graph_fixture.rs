#![no_main]

use gdnlab::graph::{parse_graph, write_graph};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(g) = parse_graph(text) {
        // whatever parses must survive a write/parse round trip
        let again = parse_graph(&write_graph(&g)).expect("round trip");
        assert_eq!(again, g);
    }
});
