#![no_main]

use climasent::corpus::{Corpus, Source};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(corpus) = Corpus::parse_tsv("fuzz", data, Source::Unknown) else {
        return;
    };
    // whatever parses must survive a write/read cycle unchanged
    let text = corpus.to_tsv().expect("parsed corpus serializes");
    let again = Corpus::parse_tsv("fuzz", text.as_bytes(), Source::Unknown).expect("reparse");
    assert_eq!(again.to_tsv().unwrap(), text);
});
