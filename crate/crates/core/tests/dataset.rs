use bvsbench_core::config::BenchConfig;
use bvsbench_core::dataset::{convert, verify_roundtrip, BvsDataset};
use bvsbench_core::stimulus::{Grid, SourceFrame, SourceSequence};
use std::f64::consts::PI;

fn cfg(read_noise: f64) -> BenchConfig {
    let mut cfg = BenchConfig::default();
    cfg.grid = Grid::new(64, 32);
    cfg.mapping.dmd_width = 256;
    cfg.mapping.dmd_height = 128;
    cfg.timing.cop_ratio = 4;
    cfg.optics.phi_max = 50.0;
    cfg.tianmouc = cfg.tianmouc.clone().noiseless();
    cfg.tianmouc.adc_bits = 14;
    cfg.tianmouc.read_noise = read_noise;
    cfg.dataset.source_fps = Some(200.0);
    cfg
}

fn flat(rgb: [f64; 3], frames: usize) -> SourceSequence {
    let (w, h) = (64, 32);
    SourceSequence {
        frames: (0..frames)
            .map(|_| SourceFrame::rgb(w, h, vec![rgb[0]; w * h], vec![rgb[1]; w * h], vec![rgb[2]; w * h]))
            .collect(),
    }
}

/// Duty units per electron at full duty for a COP pixel.
fn duty_per_electron(cfg: &BenchConfig) -> f64 {
    let m = cfg.timing.planes_per_aop_frame() as f64;
    let photons = cfg.optics.phi_max * m * cfg.timing.cop_ratio as f64;
    1.0 / (cfg.tianmouc.qe * photons)
}

#[test]
fn read_noise_raises_mae_by_half_normal_mean() {
    let src = flat([0.55, 0.35, 0.45], 8);

    let quiet = cfg(0.0);
    let base = verify_roundtrip(&convert(&src, &quiet).unwrap(), &src, &quiet).unwrap();
    assert!(base.within_bound, "{base:?}");

    let sigma = 40.0;
    let noisy = cfg(sigma);
    let rep = verify_roundtrip(&convert(&src, &noisy).unwrap(), &src, &noisy).unwrap();
    // ADC rounding adds a uniform error of variance 1 / (12 K^2) electrons^2.
    let k = noisy.tianmouc.adc_gain;
    let sigma_e = (sigma * sigma + 1.0 / (12.0 * k * k)).sqrt();
    let sigma_u = sigma_e * duty_per_electron(&noisy);
    let half_normal = (2.0 / PI).sqrt();
    // One red and one blue site per 2x2 block, two green sites averaged.
    let want = [sigma_u * half_normal, sigma_u / 2f64.sqrt() * half_normal, sigma_u * half_normal];
    for c in 0..3 {
        let rel = (rep.mae[c] - want[c]).abs() / want[c];
        assert!(rel < 0.1, "channel {c}: mae {} vs {} (base {})", rep.mae[c], want[c], base.mae[c]);
    }
}

#[test]
fn written_dataset_reloads_and_verifies() {
    let src = flat([0.2, 0.7, 0.4], 6);
    let c = cfg(0.0);
    let d = convert(&src, &c).unwrap();
    let dir = tempfile::tempdir().unwrap();
    d.write(dir.path()).unwrap();
    let back = BvsDataset::load(dir.path()).unwrap();
    assert_eq!(back.manifest, d.manifest);
    assert_eq!(back.records.len(), d.records.len());
    for (a, b) in back.records.iter().zip(&d.records) {
        assert_eq!(a.streams, b.streams);
    }
    assert!(verify_roundtrip(&back, &src, &c).unwrap().within_bound);

    let other = BenchConfig { seed: c.seed + 1, ..c.clone() };
    assert!(verify_roundtrip(&back, &src, &other).is_err());
}

#[test]
fn golden_config_is_stable() {
    let path = std::path::Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/golden.toml");
    let cfg = BenchConfig::load(&path).unwrap();
    assert_eq!(cfg.seed, 42);
    assert_eq!(cfg.grid, Grid::new(16, 8));
    let again = BenchConfig::from_toml(&cfg.to_toml()).unwrap();
    assert_eq!(again, cfg);
    assert_eq!(again.hash(), cfg.hash());
}
