#![no_main]

use bvsbench_core::encoder::PlaneStreamReader;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(mut r) = PlaneStreamReader::new(data) {
        let expected = r.header.plane_count;
        let mut n = 0u32;
        while let Ok(Some(_)) = r.next_plane() {
            n += 1;
        }
        assert!(n <= expected);
    }
});
