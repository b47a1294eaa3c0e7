#![no_main]

use bvsbench_core::stimulus::decode_pnm;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = decode_pnm(data) {
        assert!(f.channels.iter().all(|c| c.len() == f.width * f.height));
    }
});
