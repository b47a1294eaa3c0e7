#![no_main]

use bvsbench_core::tianmouc::PathwayStreams;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = PathwayStreams::from_bytes(data) {
        let again = PathwayStreams::from_bytes(&s.to_bytes()).expect("re-encoded stream parses");
        assert_eq!(again, s);
    }
});
