#![no_main]

use bvsbench_core::encoder::PlaneStream;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = PlaneStream::from_bytes(data) {
        let again = PlaneStream::from_bytes(&s.to_bytes()).expect("re-encoded stream parses");
        assert_eq!(again, s);
    }
});
