#![no_main]

use climasent::tokenizer::{encode, NormalizationScheme, Vocab, CLS, PAD, SEP, UNK};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Some((&len, rest)) = data.split_first() else {
        return;
    };
    let Ok(text) = std::str::from_utf8(rest) else {
        return;
    };
    let max_len = usize::from(len % 64);
    let tokens = [
        PAD, UNK, CLS, SEP, "climate", "risk", "##s", "c", "##l", "##i", "a", "e",
    ];
    let vocab = Vocab::from_tokens(tokens.iter().map(|t| t.to_string())).unwrap();
    for scheme in [NormalizationScheme::UncasedStripped, NormalizationScheme::CasedRaw] {
        match encode(text, &vocab, scheme, max_len) {
            Ok(seq) => {
                assert_eq!(seq.ids.len(), max_len);
                assert_eq!(seq.mask.len(), max_len);
                assert!(seq.real_length >= 2 && seq.real_length <= max_len);
                assert_eq!(seq.ids[0], vocab.cls_id());
                assert_eq!(seq.ids[seq.real_length - 1], vocab.sep_id());
            }
            Err(_) => assert!(max_len < 2),
        }
    }
});
