#![no_main]

use climasent::pipeline::PipelineConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(cfg) = PipelineConfig::from_json(text) {
            let _ = cfg.validate();
        }
    }
});
