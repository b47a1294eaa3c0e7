#![no_main]

use bvsbench_core::evs::EventStream;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(s) = EventStream::from_bytes(data) {
        let again = EventStream::from_bytes(&s.to_bytes()).expect("re-encoded stream parses");
        assert_eq!(again, s);
        let _ = s.to_csv();
    }
});
