#![no_main]

use climasent::evalstat::RunSample;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(s) = RunSample::from_json(text) {
        assert_eq!(RunSample::from_json(&s.to_json()).expect("reparse"), s);
    }
});
