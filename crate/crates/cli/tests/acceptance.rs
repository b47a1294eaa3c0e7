//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any
//! failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, ExitCode};
use std::time::Instant;

use bvsbench_core::bench::Bench;
use bvsbench_core::characterize;
use bvsbench_core::config::BenchConfig;
use bvsbench_core::dataset::{convert, verify_roundtrip};
use bvsbench_core::encoder::{BlockMapping, DitherPolicy, Encoder, TimingConfig};
use bvsbench_core::evs::{self, Bandwidth, EvsConfig};
use bvsbench_core::projector::PhotonField;
use bvsbench_core::stimulus::{self, Grid, SourceFrame, SourceSequence, StimulusKind, TargetFrame};

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

/// Mean photons per COP pixel per COP frame at full duty.
fn full_photons(cfg: &BenchConfig, grid: Grid) -> Result<f64, String> {
    let b = Bench::patch(cfg, grid).map_err(err)?;
    let e = b.exposure(&b.uniform_frame(1.0, 0).map_err(err)?).map_err(err)?;
    Ok(e.iter().sum::<f64>() / e.len() as f64 * cfg.timing.cop_ratio as f64)
}

fn set_full_photons(cfg: &mut BenchConfig, grid: Grid, photons: f64) -> Result<(), String> {
    let now = full_photons(cfg, grid)?;
    cfg.optics.phi_max *= photons / now;
    Ok(())
}

fn encoder_quantization() -> Outcome {
    let start = Instant::now();
    let timing = TimingConfig::default();
    let m = timing.planes_per_aop_frame();
    let k = 4u32;
    let grid = Grid::new(257, 1);
    let mapping = BlockMapping::tight(grid, k, k).map_err(err)?;
    let enc = Encoder::new(&mapping, &timing, &DitherPolicy::bayer(k).map_err(err)?).map_err(err)?;
    let u: Vec<f64> = (0..257).map(|i| i as f64 / 256.0).collect();
    let frame = TargetFrame::new(257, 1, u.clone(), 0, timing.aop_frame_period_ns).map_err(err)?;
    let stream = enc.encode_sequence(&[frame]).map_err(err)?;
    let slots = (m * k * k) as f64;
    let bound = 1.0 / (2.0 * slots);
    let mut worst = 0f64;
    for (x, &target) in u.iter().enumerate() {
        let (ox, oy) = mapping.block_origin(x, 0);
        let mut on = 0u32;
        for p in 0..stream.plane_count() {
            for row in 0..k as usize {
                for col in 0..k as usize {
                    on += stream.bit(p, ox + col, oy + row) as u32;
                }
            }
        }
        worst = worst.max((on as f64 / slots - target).abs());
    }
    let secs = start.elapsed().as_secs_f64();
    ensure(
        m == 42 && worst <= bound + 1e-12 && secs < 10.0,
        format!("M = {m}, max |duty - u| = {worst:.3e} <= {bound:.3e}, {secs:.2} s"),
    )
}

fn stream_ratio() -> Outcome {
    let cfg = BenchConfig::default();
    let ratio = cfg.timing.cop_ratio as usize;
    let b = Bench::patch(&cfg, Grid::new(4, 2)).map_err(err)?;
    for cops in 1..=10 {
        let frames: Vec<TargetFrame> = (0..cops * ratio)
            .map(|n| b.uniform_frame(0.5, n))
            .collect::<Result<_, _>>()
            .map_err(err)?;
        let s = b.run_tianmouc(&frames).map_err(err)?;
        if s.cop.len() != cops || s.aop.len() != 25 * cops || !s.ratio_holds() {
            return Err(format!("{cops} COP frames gave {} COP and {} AOP", s.cop.len(), s.aop.len()));
        }
    }
    Ok(format!("{ratio} AOP frames per COP frame for 1-10 COP frames"))
}

fn rotating_pattern() -> Outcome {
    let mut cfg = BenchConfig::default();
    cfg.grid = Grid::new(64, 32);
    cfg.stimulus.pattern = StimulusKind::RotatingPattern {
        angular_velocity: 200.0,
        spokes: 6,
        low: 0.0,
        high: 1.0,
    };
    cfg.tianmouc = cfg.tianmouc.clone().noiseless();
    let n = cfg.timing.cop_ratio as usize;
    let frames = stimulus::generate(&cfg.stimulus_program(), n).map_err(err)?;
    let b = Bench::patch(&cfg, cfg.grid).map_err(err)?;
    let s = b.run_tianmouc(&frames).map_err(err)?;
    for a in &s.aop {
        let half = a.width / 2;
        let in_half = |left: bool, i: usize| (i % a.width < half) == left;
        if let Some(i) = (0..a.td.len()).find(|&i| in_half(true, i) && a.td[i] != 0) {
            return Err(format!("frame {}: left-half TD {} at {i}", a.index, a.td[i]));
        }
        if a.index > 0 && !(0..a.td.len()).any(|i| in_half(false, i) && a.td[i] != 0) {
            return Err(format!("frame {}: right-half TD is all zero", a.index));
        }
        for left in [true, false] {
            let edges = a.sd.iter().any(|plane| (0..plane.len()).any(|i| in_half(left, i) && plane[i] != 0));
            if !edges {
                return Err(format!("frame {}: no SD on the {} half", a.index, if left { "left" } else { "right" }));
            }
        }
    }
    Ok(format!("{} AOP frames: left TD zero, right TD moving, SD on both halves", s.aop.len()))
}

fn evs_count_law() -> Outcome {
    let grid = Grid::new(4, 4);
    let plane = 31_250;
    let i1 = 10.0;
    let mut counts = vec![i1; grid.len() * 4];
    counts.extend(vec![i1 * 0.7f64.exp(); grid.len() * 8]);
    let field = PhotonField::from_planes(grid, plane, 0, counts).map_err(err)?;
    let cfg = EvsConfig {
        theta_on: 0.2,
        theta_off: 0.2,
        bandwidth: Bandwidth::Infinite,
        log_eps: 1e-12,
        ..EvsConfig::default().ideal()
    };
    let (s, _) = evs::simulate(&field, &cfg).map_err(err)?;
    let mut per_pixel = vec![0u32; grid.len()];
    for e in &s.events {
        if e.polarity != 1 {
            return Err(format!("OFF event at ({}, {})", e.x, e.y));
        }
        per_pixel[e.y as usize * grid.width + e.x as usize] += 1;
    }
    let (lo, hi) = (per_pixel.iter().min().copied().unwrap_or(0), per_pixel.iter().max().copied().unwrap_or(0));
    ensure(
        lo == 3 && hi == 3,
        format!("ON events per pixel between {lo} and {hi}, want exactly 3"),
    )
}

fn evs_latency() -> Outcome {
    let tau = 1e6;
    let plane = TimingConfig::default().plane_period_ns as f64;
    let lag = EvsConfig {
        bandwidth: Bandwidth::constant_tau(tau),
        ..EvsConfig::default()
    };
    let bench = |evs: EvsConfig| {
        let cfg = BenchConfig {
            evs,
            ..BenchConfig::default()
        };
        Bench::patch(&cfg, Grid::new(2, 2))
    };
    let mut p = BenchConfig::default().protocols.evs_latency;
    let sweep = p.intensities.clone();
    p.intensities = vec![50.0];
    let r = characterize::run_evs_latency(&bench(lag).map_err(err)?, &p).map_err(err)?;
    let oracle = tau * (0.7f64 / 0.5).ln();
    let got = r.points[0].median_latency_ns;

    p.intensities = sweep;
    let curve = characterize::run_evs_latency(&bench(EvsConfig::default()).map_err(err)?, &p).map_err(err)?;
    ensure(
        (got - oracle).abs() <= plane && curve.points.len() == 10 && curve.non_increasing,
        format!(
            "latency {got:.0} ns vs {oracle:.0} ns (tolerance {plane} ns); {} points non-increasing: {}",
            curve.points.len(),
            curve.non_increasing
        ),
    )
}

fn event_saturation() -> Outcome {
    let mut cfg = BenchConfig::default();
    {
        let p = &mut cfg.protocols.event_saturation;
        p.grid = Grid::new(16, 16);
        p.active_fractions = vec![0.25, 1.0];
        p.bus_rate_factor = Some(2.0);
        p.fifo_window_ms = Some(6.0);
    }
    let b = Bench::patch(&cfg, cfg.protocols.event_saturation.grid).map_err(err)?;
    let r = characterize::run_event_saturation(&b, &cfg.protocols.event_saturation).map_err(err)?;
    let top = r.points.last().ok_or("no points")?;
    let rate_err = top.emitted_rate / r.bus_rate - 1.0;
    let drop = top.drop_fraction;

    let mut knee_cfg = BenchConfig::default();
    {
        let p = &mut knee_cfg.protocols.event_saturation;
        p.grid = Grid::new(16, 16);
        p.duration_ms = 200.0;
        p.active_fractions = (1..=20).map(|i| i as f64 / 20.0).collect();
        p.fifo_window_ms = Some(2.0);
    }
    let ideal = {
        let mut c = knee_cfg.clone();
        c.evs.bus_rate = f64::INFINITY;
        c.protocols.event_saturation.active_fractions = vec![1.0];
        let b = Bench::patch(&c, c.protocols.event_saturation.grid).map_err(err)?;
        characterize::run_event_saturation(&b, &c.protocols.event_saturation).map_err(err)?.points[0].ideal_rate
    };
    let knee = |rate: f64| -> Result<f64, String> {
        let mut c = knee_cfg.clone();
        c.evs.bus_rate = rate;
        let b = Bench::patch(&c, c.protocols.event_saturation.grid).map_err(err)?;
        characterize::run_event_saturation(&b, &c.protocols.event_saturation)
            .map_err(err)?
            .knee_fraction
            .ok_or_else(|| "no knee".to_string())
    };
    let (slow, fast) = (knee(ideal / 4.0)?, knee(ideal / 2.0)?);
    ensure(
        rate_err.abs() <= 0.02 && (drop - 0.5).abs() <= 0.02 && fast > slow,
        format!("emitted/bus - 1 = {rate_err:+.4}, dropped {drop:.4}; knee {slow:.2} -> {fast:.2}"),
    )
}

fn dynamic_range() -> Outcome {
    let mut cfg = BenchConfig::default();
    let t = &mut cfg.tianmouc;
    t.adc_bits = 14;
    t.adc_gain = 1.5;
    t.black_level_dn = 100.0;
    t.full_well = 1e4;
    t.read_noise = 10.0;
    let grid = Grid::new(16, 16);
    cfg.protocols.snr_dr.grid = grid;
    let qe = cfg.tianmouc.qe;
    set_full_photons(&mut cfg, grid, 1.5e4 / qe)?;
    let b = Bench::patch(&cfg, grid).map_err(err)?;
    let r = characterize::run_snr_dr(&b, &cfg.protocols.snr_dr).map_err(err)?;
    let dr = r.dynamic_range_db;
    ensure((dr - 59.6).abs() <= 0.5, format!("DR {dr:.3} dB (want 59.6 +- 0.5)"))
}

fn uniformity() -> Outcome {
    let mut cfg = BenchConfig::default();
    let k = cfg.tianmouc.adc_gain;
    cfg.tianmouc.dsnu_sigma = 2.0 / k;
    cfg.tianmouc.prnu_sigma = 0.01;
    cfg.protocols.uniformity.n_dark = 1000;
    cfg.protocols.uniformity.n_half = 1000;
    let b = Bench::patch(&cfg, cfg.protocols.uniformity.grid).map_err(err)?;
    let r = characterize::run_uniformity(&b, &cfg.protocols.uniformity).map_err(err)?;
    let dsnu = r.dsnu_dn / 2.0 - 1.0;
    let prnu = r.prnu_pct / 1.0 - 1.0;
    ensure(
        dsnu.abs() <= 0.05 && prnu.abs() <= 0.10,
        format!("DSNU {:.4} DN ({dsnu:+.3}), PRNU {:.4} % ({prnu:+.3})", r.dsnu_dn, r.prnu_pct),
    )
}

fn photon_transfer() -> Outcome {
    let mut cfg = BenchConfig::default();
    let t = &mut cfg.tianmouc;
    t.qe = 0.6;
    t.adc_gain = 0.02;
    t.full_well = 4e4;
    t.adc_bits = 12;
    let grid = Grid::new(32, 32);
    cfg.protocols.photon_transfer.grid = grid;
    set_full_photons(&mut cfg, grid, 0.9 * 4e4 / 0.6)?;
    let b = Bench::patch(&cfg, grid).map_err(err)?;
    let r = characterize::run_photon_transfer(&b, &cfg.protocols.photon_transfer).map_err(err)?;
    let k_rel = r.system_gain / 0.02 - 1.0;
    ensure(
        (r.qe_est - 0.6).abs() <= 0.03 && k_rel.abs() <= 0.05,
        format!("qe {:.4}, K {:.5} ({k_rel:+.3})", r.qe_est, r.system_gain),
    )
}

fn dataset_cfg() -> BenchConfig {
    let mut cfg = BenchConfig::default();
    cfg.grid = Grid::new(32, 16);
    cfg.mapping.dmd_width = 160;
    cfg.mapping.dmd_height = 96;
    cfg.timing.cop_ratio = 4;
    cfg.optics.phi_max = 50.0;
    cfg.tianmouc = cfg.tianmouc.clone().noiseless();
    cfg.tianmouc.adc_bits = 14;
    cfg.dataset.source_fps = Some(200.0);
    cfg
}

/// RGB values constant on each 2x2 block and varying between blocks and
/// frames.
fn blocky_source(w: usize, h: usize, frames: usize) -> SourceSequence {
    let v = |c: usize, bx: usize, by: usize, f: usize| ((bx * 7 + by * 13 + c * 29 + f * 5) % 17) as f64 / 20.0 + 0.05;
    SourceSequence {
        frames: (0..frames)
            .map(|f| {
                let ch = |c: usize| (0..w * h).map(|i| v(c, (i % w) / 2, (i / w) / 2, f)).collect::<Vec<_>>();
                SourceFrame::rgb(w, h, ch(0), ch(1), ch(2))
            })
            .collect(),
    }
}

fn dataset_roundtrip() -> Outcome {
    let cfg = dataset_cfg();
    let src = blocky_source(32, 16, 8);
    let d = convert(&src, &cfg).map_err(err)?;
    let rep = verify_roundtrip(&d, &src, &cfg).map_err(err)?;
    let limits: Vec<f64> = rep.adc_half_step.iter().map(|h| rep.quantization_bound + h).collect();
    let mae_ok = rep.mae.iter().zip(&limits).all(|(m, l)| m <= l);

    let still = SourceSequence {
        frames: vec![src.frames[0].clone(); 8],
    };
    let s = convert(&still, &cfg).map_err(err)?;
    let td_zero = s
        .records
        .iter()
        .all(|r| r.streams.aop.iter().all(|a| a.td.iter().all(|&v| v == 0)));
    ensure(
        mae_ok && rep.within_bound && td_zero && !s.records.is_empty(),
        format!(
            "MAE {:.2e}/{:.2e}/{:.2e} <= {:.2e}/{:.2e}/{:.2e}; static TD zero in {} records: {td_zero}",
            rep.mae[0], rep.mae[1], rep.mae[2], limits[0], limits[1], limits[2],
            s.records.len()
        ),
    )
}

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bvsbench"));
    c.env_remove("BVSBENCH_LOG");
    c
}

fn files(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).into_iter().flatten().flatten() {
            let p = e.path();
            if p.is_dir() {
                stack.push(p);
            } else if let Ok(bytes) = fs::read(&p) {
                out.push((p.strip_prefix(dir).unwrap_or(&p).to_path_buf(), bytes));
            }
        }
    }
    out.sort();
    out
}

fn cli_run(out: &Path, jobs: &str, video: &Path) -> Result<Vec<Vec<u8>>, String> {
    let cfg = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs/golden.toml");
    let base: Vec<String> = ["--config", cfg.to_str().unwrap(), "--out", out.to_str().unwrap(), "--jobs", jobs]
        .iter()
        .map(|s| s.to_string())
        .collect();
    let report_dir = out.join("evs_latency");
    let commands: Vec<Vec<&str>> = vec![
        vec!["encode"],
        vec!["simulate", "--format", "csv"],
        vec!["characterize", "linearity"],
        vec!["characterize", "photon_transfer"],
        vec!["characterize", "evs_latency"],
        vec!["characterize", "evs_contrast_threshold"],
        vec!["characterize", "diff_snr"],
        vec!["convert", video.to_str().unwrap(), "--fps", "400", "--verify"],
        vec!["report", report_dir.to_str().unwrap()],
    ];
    let mut stdouts = Vec::new();
    for c in commands {
        let o = bin().args(&base).args(&c).output().map_err(err)?;
        if !o.status.success() {
            return Err(format!("{c:?}: {}", String::from_utf8_lossy(&o.stderr).trim()));
        }
        stdouts.push(o.stdout);
    }
    Ok(stdouts)
}

fn cli_determinism() -> Outcome {
    let tmp = tempfile::tempdir().map_err(err)?;
    let video = tmp.path().join("clip.bvsf");
    let src = blocky_source(16, 8, 12);
    let frames: Vec<TargetFrame> = src
        .frames
        .iter()
        .enumerate()
        .map(|(n, f)| TargetFrame::new(16, 8, f.plane(None), n as u64, 1))
        .collect::<Result<_, _>>()
        .map_err(err)?;
    fs::write(&video, stimulus::encode_bvsf(&frames).map_err(err)?).map_err(err)?;

    let runs = [("1", "a"), ("8", "b"), ("1", "c")];
    let mut trees = Vec::new();
    for (jobs, name) in runs {
        let out = tmp.path().join(name);
        let stdout = cli_run(&out, jobs, &video)?;
        trees.push((stdout, files(&out)));
    }
    let n = trees[0].1.len();
    for (i, t) in trees.iter().enumerate().skip(1) {
        if t.0 != trees[0].0 {
            return Err(format!("stdout differs in run {i}"));
        }
        if t.1.len() != n {
            return Err(format!("run {i} wrote {} files, run 0 wrote {n}", t.1.len()));
        }
        for ((pa, da), (pb, db)) in trees[0].1.iter().zip(&t.1) {
            if pa != pb || da != db {
                return Err(format!("{} differs in run {i}", pa.display()));
            }
        }
    }
    Ok(format!("{n} files byte-identical across --jobs 1, 8 and a repeat"))
}

fn main() -> ExitCode {
    let criteria: [(&str, fn() -> Outcome); 11] = [
        ("encoder quantization bound", encoder_quantization),
        ("AOP/COP stream ratio", stream_ratio),
        ("rotating pattern TD/SD", rotating_pattern),
        ("EVS count law", evs_count_law),
        ("EVS latency", evs_latency),
        ("event-rate saturation", event_saturation),
        ("dynamic range", dynamic_range),
        ("uniformity recovery", uniformity),
        ("photon transfer", photon_transfer),
        ("dataset round trip", dataset_roundtrip),
        ("CLI determinism", cli_determinism),
    ];
    let mut failed = 0;
    for (i, (name, f)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(d) => println!("PASS {:>2} {name}: {d} [{secs:.1} s]", i + 1),
            Err(d) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {d} [{secs:.1} s]", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
