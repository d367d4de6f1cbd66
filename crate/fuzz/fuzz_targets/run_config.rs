#![no_main]

use gdnlab::harness::{parse_override, RunConfig};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    // first line doubles as an override list
    let (first, rest) = text.split_once('\n').unwrap_or((text, ""));
    let overrides: Vec<String> = first.split(';').map(str::to_string).collect();
    for o in &overrides {
        let _ = parse_override(o);
    }
    if let Ok(cfg) = RunConfig::parse(rest, &overrides) {
        cfg.validate().expect("parse returns validated configs");
    }
});
