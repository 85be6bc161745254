#![no_main]

use libfuzzer_sys::fuzz_target;
use oms_bench::SynthConfig;

fuzz_target!(|data: &[u8]| {
    let Ok(config) = serde_json::from_slice::<SynthConfig>(data) else {
        return;
    };
    let samples = config
        .num_classes
        .saturating_mul(config.dim)
        .saturating_mul(config.n_train.saturating_add(config.n_test));
    if config.validate().is_err() || samples > 200_000 {
        return;
    }
    if let Ok(bundle) = oms_bench::generate(&config) {
        bundle.validate().expect("generated bundles are valid");
        bundle.to_container().expect("generated bundles serialize");
    }
});
