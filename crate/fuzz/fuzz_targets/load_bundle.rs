#![no_main]

use libfuzzer_sys::fuzz_target;
use oms_bench::eval;
use oms_bench::{MonitorConfig, MonitorKind};

fuzz_target!(|data: &[u8]| {
    let Ok(container) = oms_bench::read_container(data) else {
        return;
    };
    let Ok(bundle) = oms_bench::load_bundle(&container) else {
        return;
    };
    let _ = eval::simulate_perfect_ood(&bundle);
    if bundle.train.len() > 4096 || bundle.dim() > 64 {
        return;
    }
    for kind in MonitorKind::ALL {
        if let Ok(model) = oms_bench::fit(&bundle, &MonitorConfig::new(kind)) {
            let _ = model.score_evaluation_set(&bundle);
        }
    }
});
