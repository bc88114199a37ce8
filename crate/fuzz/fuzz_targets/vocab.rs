#![no_main]

use climasent::tokenizer::Vocab;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(v) = Vocab::parse(data) {
        let text = v.to_file_string();
        let again = Vocab::parse(text.as_bytes()).expect("reparse");
        assert_eq!(again.len(), v.len());
        for id in 0..v.len() as u32 {
            assert_eq!(again.token(id), v.token(id));
        }
    }
});
