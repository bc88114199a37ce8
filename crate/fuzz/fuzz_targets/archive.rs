#![no_main]

use climasent::encoder::{decode_archive, encode_archive};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok((params, config)) = decode_archive(data) {
        let bytes = encode_archive(&params, &config).expect("decoded archive re-encodes");
        let (p2, c2) = decode_archive(&bytes).expect("re-encoded archive decodes");
        assert_eq!(c2, config);
        for ((n1, a), (n2, b)) in params.named().into_iter().zip(p2.named()) {
            assert_eq!(n1, n2);
            let same = a.data().iter().zip(b.data()).all(|(x, y)| x.to_bits() == y.to_bits());
            assert!(same, "{n1} changed");
        }
    }
});
