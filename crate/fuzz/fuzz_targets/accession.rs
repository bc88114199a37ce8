#![no_main]

use climasent::corpus::edgar::Accession;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(a) = text.parse::<Accession>() {
            let shown = a.to_string();
            assert_eq!(shown.parse::<Accession>().unwrap(), a);
        }
    }
});
