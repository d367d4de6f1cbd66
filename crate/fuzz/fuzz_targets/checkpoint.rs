#![no_main]

use gdnlab::gdn::{parse_checkpoint, write_checkpoint};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(m) = parse_checkpoint(text) {
        let again = parse_checkpoint(&write_checkpoint(&m)).expect("round trip");
        assert_eq!(again, m);
    }
});
