#![no_main]

use bvsbench_core::projector::PhotonField;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(f) = PhotonField::from_phot_bytes(data) {
        let _ = f.to_phot_bytes();
    }
});
