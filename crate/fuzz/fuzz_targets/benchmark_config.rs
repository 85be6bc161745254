#![no_main]

use libfuzzer_sys::fuzz_target;
use oms_bench::BenchmarkConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(config) = BenchmarkConfig::from_json(text) {
        let _ = config.validate();
    }
});
