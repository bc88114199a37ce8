#![no_main]

use climasent::corpus::{segment_item1a, Segmenter};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    for s in Segmenter::default().segment(text) {
        assert!(!s.trim().is_empty());
        assert!(!s.contains('\n'));
    }
    let _ = segment_item1a(text);
});
