#![no_main]

use libfuzzer_sys::fuzz_target;
use oms_bench::tensor_io::{decode_container, encode_container};

fuzz_target!(|data: &[u8]| {
    let Ok(container) = oms_bench::read_container(data) else {
        return;
    };
    let bytes = encode_container(&container).expect("decoded containers re-encode");
    let again = decode_container(&bytes).expect("re-encoded bytes decode");
    assert!(again.entries().eq(container.entries()));
});
