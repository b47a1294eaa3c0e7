#![no_main]

use bvsbench_core::stimulus::decode_bvsf;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(seq) = decode_bvsf(data) {
        for f in &seq.frames {
            assert!(f.channels.iter().flatten().all(|v| (0.0..=1.0).contains(v)));
        }
    }
});
