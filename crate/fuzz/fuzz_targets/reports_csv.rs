#![no_main]

use libfuzzer_sys::fuzz_target;
use oms_bench::report;

fuzz_target!(|data: &[u8]| {
    let Ok(rows) = report::read_csv(data) else {
        return;
    };
    let text = report::to_csv(&rows).expect("parsed rows re-encode");
    assert_eq!(report::read_csv(text.as_bytes()).expect("re-encoded rows parse"), rows);
});
