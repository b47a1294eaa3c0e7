use bvsbench_core::bench::Bench;
use bvsbench_core::characterize::{self, Protocol};
use bvsbench_core::config::{BenchConfig, LogSweep};
use bvsbench_core::evs::{Bandwidth, EvsConfig};
use bvsbench_core::stimulus::Grid;
use bvsbench_core::Error;

/// Mean photons per COP pixel per COP frame at full duty.
fn full_photons(cfg: &BenchConfig, grid: Grid) -> f64 {
    let b = Bench::patch(cfg, grid).unwrap();
    let e = b.exposure(&b.uniform_frame(1.0, 0).unwrap()).unwrap();
    e.iter().sum::<f64>() / e.len() as f64 * cfg.timing.cop_ratio as f64
}

/// Scale the source so full duty gives `photons` per COP frame.
fn set_full_photons(cfg: &mut BenchConfig, grid: Grid, photons: f64) {
    let now = full_photons(cfg, grid);
    cfg.optics.phi_max *= photons / now;
}

fn lsq(x: &[f64], y: &[f64]) -> (f64, f64) {
    let n = x.len() as f64;
    let (sx, sy) = (x.iter().sum::<f64>(), y.iter().sum::<f64>());
    let sxx: f64 = x.iter().map(|v| v * v).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| a * b).sum();
    let slope = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    (slope, (sy - slope * sx) / n)
}

fn linearity_cfg(alpha: f64) -> BenchConfig {
    let mut cfg = BenchConfig::default();
    cfg.tianmouc = cfg.tianmouc.clone().noiseless();
    cfg.tianmouc.adc_bits = 12;
    cfg.tianmouc.adc_gain = 0.4;
    cfg.tianmouc.adc_nonlinearity = alpha;
    cfg.protocols.linearity.grid = Grid::new(8, 8);
    cfg.protocols.linearity.frames_per_level = 2;
    let fw = cfg.tianmouc.full_well;
    let qe = cfg.tianmouc.qe;
    set_full_photons(&mut cfg, Grid::new(8, 8), 0.9 * fw / qe);
    cfg
}

#[test]
fn noiseless_linear_response_has_negligible_error() {
    let cfg = linearity_cfg(0.0);
    let b = Bench::patch(&cfg, cfg.protocols.linearity.grid).unwrap();
    let r = characterize::run_linearity(&b, &cfg.protocols.linearity).unwrap();
    assert!(r.le_pct < 0.03, "{}", r.le_pct);
    let expect = cfg.tianmouc.adc_gain * cfg.tianmouc.qe;
    assert!((r.slope / expect - 1.0).abs() < 1e-3, "{} vs {expect}", r.slope);
}

#[test]
fn quadratic_adc_matches_least_squares_oracle() {
    let cfg = linearity_cfg(2e-5);
    let b = Bench::patch(&cfg, cfg.protocols.linearity.grid).unwrap();
    let r = characterize::run_linearity(&b, &cfg.protocols.linearity).unwrap();
    let t = &cfg.tianmouc;
    let fs = r.full_scale_dn;
    let predict = |photons: f64| {
        let v = t.adc_gain * t.qe * photons;
        v + t.adc_nonlinearity * v * v
    };
    let used: Vec<_> = r
        .levels
        .iter()
        .filter(|l| {
            let d = predict(l.photons);
            d >= 0.05 * fs && d <= 0.95 * fs
        })
        .collect();
    assert_eq!(used.len(), r.levels.iter().filter(|l| l.used).count());
    let x: Vec<f64> = used.iter().map(|l| l.photons).collect();
    let y: Vec<f64> = x.iter().map(|&p| predict(p)).collect();
    let (s, c) = lsq(&x, &y);
    let oracle = x
        .iter()
        .zip(&y)
        .map(|(&p, &d)| (d - (s * p + c)).abs())
        .fold(0.0, f64::max)
        * 100.0
        / fs;
    assert!(oracle > 0.5, "nonlinearity too weak for the check: {oracle}");
    assert!((r.le_pct - oracle).abs() < 0.03, "{} vs {oracle}", r.le_pct);
}

/// Peak LSQ residual over the 5-95% range, percent of full scale, for an
/// ADC with quadratic term `alpha` at the given photon levels.
fn quadratic_le_oracle(cfg: &BenchConfig, photons: &[f64], alpha: f64, full_scale: f64) -> f64 {
    let t = &cfg.tianmouc;
    let dn = |p: f64| {
        let v = t.adc_gain * t.qe * p;
        v + alpha * v * v
    };
    let (x, y): (Vec<f64>, Vec<f64>) = photons
        .iter()
        .map(|&p| (p, dn(p)))
        .filter(|&(_, d)| d >= 0.05 * full_scale && d <= 0.95 * full_scale)
        .unzip();
    let (s, c) = lsq(&x, &y);
    x.iter().zip(&y).map(|(&p, &d)| (d - (s * p + c)).abs()).fold(0.0, f64::max) * 100.0 / full_scale
}

#[test]
fn two_percent_quadratic_gives_two_percent_le() {
    let base = linearity_cfg(0.0);
    let b = Bench::patch(&base, base.protocols.linearity.grid).unwrap();
    let r0 = characterize::run_linearity(&b, &base.protocols.linearity).unwrap();
    let photons: Vec<f64> = r0.levels.iter().map(|l| l.photons).collect();
    let (mut lo, mut hi) = (0.0, 1e-3);
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        if quadratic_le_oracle(&base, &photons, mid, r0.full_scale_dn) < 2.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let cfg = linearity_cfg(lo);
    let b = Bench::patch(&cfg, cfg.protocols.linearity.grid).unwrap();
    let r = characterize::run_linearity(&b, &cfg.protocols.linearity).unwrap();
    assert!((r.le_pct - 2.0).abs() <= 0.2, "LE {} at alpha {lo}", r.le_pct);
}

#[test]
fn linearity_rejects_short_sweeps_and_saturation() {
    let mut cfg = linearity_cfg(0.0);
    cfg.protocols.linearity.levels = vec![0.05, 0.5, 0.95];
    let b = Bench::patch(&cfg, cfg.protocols.linearity.grid).unwrap();
    let e = characterize::run_linearity(&b, &cfg.protocols.linearity).unwrap_err();
    assert!(matches!(e, Error::Precondition(_)), "{e}");
    assert_eq!(e.exit_code(), 2);

    let mut cfg = linearity_cfg(0.0);
    cfg.optics.phi_max *= 1e3;
    let b = Bench::patch(&cfg, cfg.protocols.linearity.grid).unwrap();
    let e = characterize::run_linearity(&b, &cfg.protocols.linearity).unwrap_err();
    assert!(matches!(e, Error::Saturated(_)), "{e}");
}

#[test]
fn uniformity_recovers_injected_nonuniformity() {
    let mut cfg = BenchConfig::default();
    let k = cfg.tianmouc.adc_gain;
    cfg.tianmouc.dsnu_sigma = 2.0 / k;
    cfg.tianmouc.prnu_sigma = 0.01;
    cfg.protocols.uniformity.n_dark = 200;
    cfg.protocols.uniformity.n_half = 200;
    let b = Bench::patch(&cfg, cfg.protocols.uniformity.grid).unwrap();
    let r = characterize::run_uniformity(&b, &cfg.protocols.uniformity).unwrap();
    assert!((r.dsnu_dn / 2.0 - 1.0).abs() < 0.08, "dsnu {}", r.dsnu_dn);
    assert!((r.prnu_pct / 1.0 - 1.0).abs() < 0.15, "prnu {}", r.prnu_pct);
    assert!((0.4..=0.6).contains(&r.half_fraction_of_saturation));
}

#[test]
fn read_noise_alone_leaves_no_dsnu() {
    let mut cfg = BenchConfig::default();
    cfg.tianmouc.read_noise = 10.0;
    cfg.protocols.uniformity.grid = Grid::new(32, 32);
    let b = Bench::patch(&cfg, cfg.protocols.uniformity.grid).unwrap();
    let r = characterize::run_uniformity(&b, &cfg.protocols.uniformity).unwrap();
    let n = cfg.protocols.uniformity.n_dark as f64;
    let limit = 3.0 * 10.0 * cfg.tianmouc.adc_gain / n.sqrt();
    assert!(r.dsnu_dn < limit, "{} >= {limit}", r.dsnu_dn);
}

#[test]
fn uniformity_needs_enough_frames() {
    let mut cfg = BenchConfig::default();
    cfg.protocols.uniformity.n_dark = 50;
    let b = Bench::patch(&cfg, cfg.protocols.uniformity.grid).unwrap();
    let e = characterize::run_uniformity(&b, &cfg.protocols.uniformity).unwrap_err();
    assert!(matches!(e, Error::Precondition(_)));
}

fn snr_cfg(read_noise: f64) -> BenchConfig {
    let mut cfg = BenchConfig::default();
    let t = &mut cfg.tianmouc;
    t.adc_bits = 14;
    t.adc_gain = 1.5;
    t.black_level_dn = 100.0;
    t.full_well = 1e4;
    t.read_noise = read_noise;
    let grid = Grid::new(16, 16);
    cfg.protocols.snr_dr.grid = grid;
    cfg.protocols.snr_dr.frames_per_level = 16;
    let fw = cfg.tianmouc.full_well;
    let qe = cfg.tianmouc.qe;
    set_full_photons(&mut cfg, grid, 1.5 * fw / qe);
    cfg
}

/// Closed-form dynamic range: saturation electrons over the electrons at
/// which shot plus read plus quantization noise equals the signal.
fn dr_oracle(fw: f64, read: f64, k: f64) -> f64 {
    let s2 = read * read + 1.0 / (12.0 * k * k);
    let e_min = (1.0 + (1.0 + 4.0 * s2).sqrt()) / 2.0;
    20.0 * (fw / e_min).log10()
}

#[test]
fn dynamic_range_matches_closed_form() {
    let cfg = snr_cfg(10.0);
    let b = Bench::patch(&cfg, cfg.protocols.snr_dr.grid).unwrap();
    let r = characterize::run_snr_dr(&b, &cfg.protocols.snr_dr).unwrap();
    let oracle = dr_oracle(1e4, 10.0, 1.5);
    assert!((oracle - 59.566).abs() < 0.01);
    assert!((r.dynamic_range_db - oracle).abs() < 0.5, "{} vs {oracle}", r.dynamic_range_db);
}

#[test]
fn shot_limited_snr_grows_with_square_root() {
    let mut cfg = snr_cfg(0.0);
    cfg.protocols.snr_dr.levels = LogSweep {
        min: 1e-5,
        max: 3.0,
        count: 40,
    };
    let b = Bench::patch(&cfg, cfg.protocols.snr_dr.grid).unwrap();
    let r = characterize::run_snr_dr(&b, &cfg.protocols.snr_dr).unwrap();
    assert!((r.loglog_slope - 0.5).abs() <= 0.02, "{}", r.loglog_slope);
}

#[test]
fn snr_without_crossing_is_undefined() {
    let mut cfg = snr_cfg(10.0);
    cfg.protocols.snr_dr.levels = LogSweep {
        min: 0.05,
        max: 3.0,
        count: 20,
    };
    let b = Bench::patch(&cfg, cfg.protocols.snr_dr.grid).unwrap();
    let e = characterize::run_snr_dr(&b, &cfg.protocols.snr_dr).unwrap_err();
    assert!(matches!(e, Error::MetricUndefined(_)), "{e}");
    assert_eq!(e.exit_code(), 3);
}

fn ptc_cfg() -> BenchConfig {
    let mut cfg = BenchConfig::default();
    let t = &mut cfg.tianmouc;
    t.qe = 0.6;
    t.adc_gain = 0.02;
    t.full_well = 4e4;
    t.adc_bits = 12;
    let grid = Grid::new(32, 32);
    cfg.protocols.photon_transfer.grid = grid;
    cfg.protocols.photon_transfer.frames_per_level = 16;
    set_full_photons(&mut cfg, grid, 0.9 * 4e4 / 0.6);
    cfg
}

#[test]
fn photon_transfer_recovers_gain_and_qe() {
    let cfg = ptc_cfg();
    let b = Bench::patch(&cfg, cfg.protocols.photon_transfer.grid).unwrap();
    let r = characterize::run_photon_transfer(&b, &cfg.protocols.photon_transfer).unwrap();
    assert!((r.qe_est - 0.6).abs() < 0.03, "qe {}", r.qe_est);
    assert!((r.system_gain / 0.02 - 1.0).abs() < 0.05, "K {}", r.system_gain);
}

#[test]
fn photon_transfer_qe_is_invariant_to_source_power() {
    let cfg = ptc_cfg();
    let b = Bench::patch(&cfg, cfg.protocols.photon_transfer.grid).unwrap();
    let p = &cfg.protocols.photon_transfer;
    let a = characterize::run_photon_transfer(&b, p).unwrap();
    let doubled = b.with_phi_max(2.0 * b.optics().phi_max).unwrap();
    let mut half_levels = p.clone();
    half_levels.levels = p.levels.iter().map(|u| u / 2.0).collect();
    let c = characterize::run_photon_transfer(&doubled, &half_levels).unwrap();
    assert!((a.qe_est - c.qe_est).abs() < 0.03, "{} vs {}", a.qe_est, c.qe_est);
}

#[test]
fn photon_transfer_rejects_dark_only_input() {
    let mut cfg = ptc_cfg();
    cfg.protocols.photon_transfer.levels = vec![0.0; 4];
    let b = Bench::patch(&cfg, cfg.protocols.photon_transfer.grid).unwrap();
    let e = characterize::run_photon_transfer(&b, &cfg.protocols.photon_transfer).unwrap_err();
    assert!(matches!(e, Error::Precondition(_)));
}

fn latency_bench(evs: EvsConfig) -> Bench {
    let cfg = BenchConfig {
        evs,
        ..BenchConfig::default()
    };
    Bench::patch(&cfg, Grid::new(2, 2)).unwrap()
}

#[test]
fn lag_free_latency_is_zero() {
    let evs = EvsConfig {
        bandwidth: Bandwidth::Infinite,
        ..EvsConfig::default()
    };
    let cfg = BenchConfig::default();
    let r = characterize::run_evs_latency(&latency_bench(evs), &cfg.protocols.evs_latency).unwrap();
    assert!(r.points.iter().all(|p| p.median_latency_ns == 0.0));
}

#[test]
fn constant_tau_latency_matches_crossing_time() {
    let evs = EvsConfig {
        bandwidth: Bandwidth::constant_tau(1e6),
        ..EvsConfig::default()
    };
    let mut p = BenchConfig::default().protocols.evs_latency;
    p.intensities = vec![50.0];
    let r = characterize::run_evs_latency(&latency_bench(evs), &p).unwrap();
    let oracle = 1e6 * (0.7f64 / 0.5).ln();
    let plane = 31_250.0;
    assert!((r.points[0].median_latency_ns - oracle).abs() <= plane, "{}", r.points[0].median_latency_ns);
}

#[test]
fn latency_does_not_increase_with_intensity() {
    let p = BenchConfig::default().protocols.evs_latency;
    assert_eq!(p.intensities.len(), 10);
    let r = characterize::run_evs_latency(&latency_bench(EvsConfig::default()), &p).unwrap();
    assert!(r.non_increasing);
    let first = r.points.first().unwrap().median_latency_ns;
    let last = r.points.last().unwrap().median_latency_ns;
    assert!(last < first, "{first} {last}");
}

#[test]
fn latency_preconditions() {
    let mut p = BenchConfig::default().protocols.evs_latency;
    p.trials = 5;
    let e = characterize::run_evs_latency(&latency_bench(EvsConfig::default()), &p).unwrap_err();
    assert!(matches!(e, Error::Precondition(_)));
    let mut p = BenchConfig::default().protocols.evs_latency;
    p.contrast = 0.1;
    let e = characterize::run_evs_latency(&latency_bench(EvsConfig::default()), &p).unwrap_err();
    assert!(matches!(e, Error::Precondition(_)));
}

#[test]
fn noiseless_contrast_threshold_is_first_listed_level_above_theta() {
    let cfg = BenchConfig::default();
    let b = Bench::patch(&cfg, cfg.protocols.evs_contrast_threshold.grid).unwrap();
    let r = characterize::run_evs_contrast_threshold(&b, &cfg.protocols.evs_contrast_threshold).unwrap();
    assert_eq!(r.threshold, 0.25);

    let mut p = cfg.protocols.evs_contrast_threshold.clone();
    p.contrasts = vec![0.05, 0.1, 0.15];
    let e = characterize::run_evs_contrast_threshold(&b, &p).unwrap_err();
    assert!(matches!(e, Error::Precondition(_)));
}

#[test]
fn jittered_contrast_threshold_stays_within_two_sigma() {
    let mut cfg = BenchConfig::default();
    let sigma = 0.03;
    cfg.evs.threshold_sigma = sigma;
    let mut p = cfg.protocols.evs_contrast_threshold.clone();
    p.grid = Grid::new(16, 16);
    p.contrasts = (0..16).map(|i| 0.1 + 0.015 * i as f64).collect();
    let b = Bench::patch(&cfg, p.grid).unwrap();
    let r = characterize::run_evs_contrast_threshold(&b, &p).unwrap();
    let t = r.threshold_realized;
    assert!((0.2 - 2.0 * sigma..=0.2 + 2.0 * sigma).contains(&t), "{t}");
}

#[test]
fn saturated_bus_emits_at_its_rate_and_drops_the_excess() {
    let mut cfg = BenchConfig::default();
    let p = &mut cfg.protocols.event_saturation;
    p.grid = Grid::new(16, 16);
    p.active_fractions = vec![0.25, 1.0];
    p.bus_rate_factor = Some(2.0);
    p.fifo_window_ms = Some(6.0);
    let b = Bench::patch(&cfg, cfg.protocols.event_saturation.grid).unwrap();
    let r = characterize::run_event_saturation(&b, &cfg.protocols.event_saturation).unwrap();
    let top = r.points.last().unwrap();
    assert!((top.emitted_rate / r.bus_rate - 1.0).abs() < 0.02, "{} vs {}", top.emitted_rate, r.bus_rate);
    assert!((top.drop_fraction - 0.5).abs() < 0.02, "{}", top.drop_fraction);
    assert_eq!(r.drop_stats.generated, r.drop_stats.emitted + r.drop_stats.dropped);
}

#[test]
fn light_load_passes_the_bus_untouched() {
    let mut cfg = BenchConfig::default();
    let p = &mut cfg.protocols.event_saturation;
    p.grid = Grid::new(8, 8);
    p.duration_ms = 100.0;
    p.active_fractions = vec![0.1, 0.5, 1.0];
    let b = Bench::patch(&cfg, cfg.protocols.event_saturation.grid).unwrap();
    let r = characterize::run_event_saturation(&b, &cfg.protocols.event_saturation).unwrap();
    assert!(r.knee_fraction.is_none());
    assert_eq!(r.drop_stats.dropped, 0);
    for pt in &r.points {
        assert_eq!(pt.drop_fraction, 0.0);
        assert!(pt.shortfall.abs() < 0.05, "{}", pt.shortfall);
        assert!(pt.ideal_rate < r.bus_rate);
    }
}

#[test]
fn saturation_knee_moves_right_with_faster_bus() {
    let mut cfg = BenchConfig::default();
    let p = &mut cfg.protocols.event_saturation;
    p.grid = Grid::new(16, 16);
    p.duration_ms = 200.0;
    p.active_fractions = (1..=20).map(|i| i as f64 / 20.0).collect();
    let ideal = {
        let mut c = cfg.clone();
        c.evs.bus_rate = f64::INFINITY;
        c.protocols.event_saturation.active_fractions = vec![1.0];
        let b = Bench::patch(&c, c.protocols.event_saturation.grid).unwrap();
        characterize::run_event_saturation(&b, &c.protocols.event_saturation).unwrap().points[0].ideal_rate
    };
    let knee = |rate: f64| {
        let mut c = cfg.clone();
        c.evs.bus_rate = rate;
        c.protocols.event_saturation.fifo_window_ms = Some(2.0);
        let b = Bench::patch(&c, c.protocols.event_saturation.grid).unwrap();
        characterize::run_event_saturation(&b, &c.protocols.event_saturation)
            .unwrap()
            .knee_fraction
            .unwrap()
    };
    let (slow, fast) = (knee(ideal / 4.0), knee(ideal / 2.0));
    assert!(fast > slow, "{slow} {fast}");
}

fn diff_cfg(delta: f64) -> BenchConfig {
    let mut cfg = BenchConfig::default();
    cfg.tianmouc.full_well = 1e5;
    let grid = cfg.protocols.diff_snr.grid;
    let qe = cfg.tianmouc.qe;
    set_full_photons(&mut cfg, grid, 2e4 / qe);
    cfg.protocols.diff_snr.delta_electrons = delta;
    cfg.protocols.diff_snr.trials = 40;
    cfg
}

#[test]
fn td_noise_matches_shot_noise_prediction() {
    let mut cfg = diff_cfg(400.0);
    cfg.tianmouc.read_noise = 0.0;
    cfg.tianmouc.g_td = 0.1;
    let b = Bench::patch(&cfg, cfg.protocols.diff_snr.grid).unwrap();
    let r = characterize::run_diff_snr(&b, &cfg.protocols.diff_snr).unwrap();
    let expect = (r.expected_td_shot_noise.powi(2) + 1.0 / 12.0).sqrt();
    assert!((r.td.noise / expect - 1.0).abs() < 0.05, "{} vs {expect}", r.td.noise);
    assert!((r.td.signal - 0.1 * r.delta_electrons_realized).abs() < 0.5);
}

#[test]
fn td_signal_doubles_with_the_step() {
    let snr = |delta: f64| {
        let cfg = diff_cfg(delta);
        let b = Bench::patch(&cfg, cfg.protocols.diff_snr.grid).unwrap();
        characterize::run_diff_snr(&b, &cfg.protocols.diff_snr).unwrap()
    };
    let (a, c) = (snr(300.0), snr(600.0));
    let ratio = c.td.signal / a.td.signal;
    assert!((ratio - 2.0).abs() < 0.1, "{ratio}");
    let snr_ratio = c.td.snr.unwrap() / a.td.snr.unwrap();
    assert!((snr_ratio / 2.0 - 1.0).abs() <= 0.1, "{snr_ratio}");
    assert!(a.sd.as_ref().unwrap().signal > 0.0);
}

#[test]
fn noiseless_diff_snr_is_infinite() {
    let mut cfg = diff_cfg(300.0);
    cfg.tianmouc = cfg.tianmouc.clone().noiseless();
    let b = Bench::patch(&cfg, cfg.protocols.diff_snr.grid).unwrap();
    let r = characterize::run_diff_snr(&b, &cfg.protocols.diff_snr).unwrap();
    assert!(r.td.infinite && r.td.snr.is_none());
}

#[test]
fn dispatcher_wraps_reports_and_rejects_unknown_names() {
    let mut cfg = linearity_cfg(0.0);
    cfg.seed = 7;
    let r = characterize::run(&cfg, Protocol::Linearity).unwrap();
    assert_eq!(r.protocol, "linearity");
    assert_eq!(r.seed, 7);
    assert_eq!(r.config_hash, cfg.hash());
    assert!(r.metrics.get("le_pct").is_some());
    assert_eq!(r.curves.len(), 1);
    let e = "nope".parse::<Protocol>().unwrap_err();
    assert_eq!(e.exit_code(), 2);
    for p in Protocol::ALL {
        assert_eq!(p.name().parse::<Protocol>().unwrap(), p);
    }
}
