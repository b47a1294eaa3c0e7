#![no_main]

use bvsbench_core::config::BenchConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else {
        return;
    };
    if let Ok(cfg) = BenchConfig::from_toml(text) {
        let _ = cfg.hash();
        let _ = BenchConfig::from_toml(&cfg.to_toml());
    }
});
