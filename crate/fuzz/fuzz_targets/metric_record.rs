#![no_main]

use gdnlab::harness::{best_during_training, MetricRecord, RunMeta};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    let _ = serde_json::from_str::<RunMeta>(text);
    let records: Vec<MetricRecord> = text.lines().filter_map(|l| serde_json::from_str(l).ok()).collect();
    let _ = best_during_training(&records);
});
