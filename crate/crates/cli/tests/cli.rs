use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use bvsbench_core::encoder::{PlaneStreamReader, DMDS_HEADER_LEN};
use bvsbench_core::evs::EventStream;
use bvsbench_core::tianmouc::PathwayStreams;

fn bin() -> Command {
    let mut c = Command::new(env!("CARGO_BIN_EXE_bvsbench"));
    c.env_remove("BVSBENCH_LOG");
    c
}

fn repo_path(rel: &str) -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../..").join(rel)
}

fn golden_config() -> PathBuf {
    repo_path("configs/golden.toml")
}

fn run(args: &[&str]) -> Output {
    bin().args(args).output().expect("spawn bvsbench")
}

fn run_ok(args: &[&str]) -> Output {
    let out = run(args);
    assert!(
        out.status.success(),
        "bvsbench {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn write_config(dir: &Path, text: &str) -> PathBuf {
    let p = dir.join("bench.toml");
    fs::write(&p, text).unwrap();
    p
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// Compares `actual` with the checked-in golden file. Setting
/// `BVSBENCH_BLESS=1` rewrites the golden copy instead.
fn check_golden(actual: &Path, name: &str) {
    let golden = Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden").join(name);
    let got = fs::read(actual).unwrap();
    if std::env::var_os("BVSBENCH_BLESS").is_some() {
        fs::write(&golden, &got).unwrap();
        return;
    }
    let want = fs::read(&golden).unwrap_or_else(|e| panic!("{}: {e}", golden.display()));
    assert!(got == want, "{name} differs from the golden copy ({} vs {} bytes)", got.len(), want.len());
}

#[test]
fn golden_streams_are_stable() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    run_ok(&["--config", s(&golden_config()), "--out", s(out), "encode"]);
    run_ok(&["--config", s(&golden_config()), "--out", s(out), "simulate"]);
    check_golden(&out.join("planes.dmds"), "planes.dmds");
    check_golden(&out.join("tianmouc.tmoc"), "tianmouc.tmoc");
    check_golden(&out.join("events.evt1"), "events.evt1");

    let tm = PathwayStreams::from_bytes(&fs::read(out.join("tianmouc.tmoc")).unwrap()).unwrap();
    assert!(tm.ratio_holds());
    assert_eq!((tm.cop_width, tm.cop_height), (16, 8));
}

#[test]
fn zero_level_encodes_all_dark_planes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    run_ok(&["--config", s(&golden_config()), "--out", s(out), "encode", "--level", "0", "--frames", "2"]);
    let bytes = fs::read(out.join("planes.dmds")).unwrap();
    assert!(bytes.len() > DMDS_HEADER_LEN);
    let mut r = PlaneStreamReader::new(&bytes[..]).unwrap();
    assert_eq!(r.header.plane_count, 2 * 42);
    let mut n = 0;
    while let Some(plane) = r.next_plane().unwrap() {
        assert!(plane.iter().all(|&b| b == 0), "plane {n} has lit mirrors");
        n += 1;
    }
    assert_eq!(n, 84);
}

#[test]
fn broken_mapping_invariant_is_rejected() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[mapping]\nk_cop = 4\nk_aop = 6\n");
    let out = run(&["--config", s(&cfg), "--out", s(dir.path()), "encode"]);
    assert_eq!(out.status.code(), Some(2));
    let err = String::from_utf8_lossy(&out.stderr);
    assert!(err.contains("k_aop = 2 x k_cop"), "{err}");
}

#[test]
fn unknown_protocol_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--out", s(dir.path()), "characterize", "flatfield"]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("unknown protocol"));
}

#[test]
fn zero_jobs_exits_2() {
    let dir = tempfile::tempdir().unwrap();
    let out = run(&["--jobs", "0", "--out", s(dir.path()), "characterize", "linearity"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn undefined_metric_exits_3() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(dir.path(), "[protocols.snr_dr.levels]\nmin = 0.01\nmax = 3.0\ncount = 20\n");
    let out = run(&["--config", s(&cfg), "--out", s(dir.path()), "characterize", "snr_dr"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn linearity_report_renders_residual_plot() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path();
    let stdout = run_ok(&["--out", s(out), "characterize", "linearity"]).stdout;
    let metrics: serde_json::Value = serde_json::from_slice(&stdout).unwrap();
    let n_levels = metrics["levels"].as_array().unwrap().len();
    assert_eq!(n_levels, 19);

    let pdir = out.join("linearity");
    run_ok(&["report", s(&pdir)]);
    let svg = fs::read_to_string(pdir.join("residual.svg")).unwrap();
    assert_eq!(svg.matches("<polyline").count(), 1);
    let csv = fs::read_to_string(pdir.join("levels.csv")).unwrap();
    assert_eq!(csv.lines().count(), n_levels + 1);
}

#[test]
fn csv_format_prints_first_table() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = run_ok(&["--format", "csv", "--out", s(dir.path()), "characterize", "linearity"]).stdout;
    let text = String::from_utf8(stdout).unwrap();
    assert!(text.starts_with("u,photons,mean_dn,used,residual_dn"), "{text}");
}

#[test]
fn static_scene_without_noise_gives_no_events() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = write_config(
        dir.path(),
        "grid = { width = 8, height = 8 }\n\
         [stimulus]\nframes = 6\n\
         [stimulus.pattern]\nkind = \"uniform\"\nlevel = 0.5\n\
         [evs]\nnoise_rate_hz = 0.0\nthreshold_sigma = 0.0\n",
    );
    run_ok(&["--config", s(&cfg), "--out", s(dir.path()), "simulate", "--sensor", "evs"]);
    let bytes = fs::read(dir.path().join("events.evt1")).unwrap();
    let ev = EventStream::from_bytes(&bytes).unwrap();
    assert!(ev.events.is_empty(), "{} events", ev.events.len());
    assert!(!dir.path().join("tianmouc.tmoc").exists());
}

fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    let mut out = Vec::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for e in fs::read_dir(&d).unwrap() {
            let p = e.unwrap().path();
            if p.is_dir() {
                stack.push(p);
            } else {
                out.push((p.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&p).unwrap()));
            }
        }
    }
    out.sort();
    out
}

fn write_ppm_sequence(dir: &Path, frames: usize, w: usize, h: usize) -> PathBuf {
    let seq = dir.join("frames");
    fs::create_dir_all(&seq).unwrap();
    for f in 0..frames {
        let mut data = format!("P6\n{w} {h}\n255\n").into_bytes();
        for y in 0..h {
            for x in 0..w {
                data.extend_from_slice(&[(x * 15 + f * 7) as u8, (y * 30) as u8, ((x + y) * 9) as u8]);
            }
        }
        fs::write(seq.join(format!("{f:04}.ppm")), data).unwrap();
    }
    seq
}

fn all_commands(out: &Path, jobs: &str, video: &Path) -> Vec<Vec<u8>> {
    let cfg = golden_config();
    let base = ["--config", s(&cfg), "--out", s(out), "--jobs", jobs];
    let mut stdouts = Vec::new();
    let mut go = |rest: &[&str]| {
        let mut args = base.to_vec();
        args.extend_from_slice(rest);
        stdouts.push(run_ok(&args).stdout);
    };
    go(&["encode"]);
    go(&["simulate", "--format", "csv"]);
    go(&["characterize", "evs_latency"]);
    go(&["characterize", "diff_snr"]);
    go(&["characterize", "photon_transfer"]);
    go(&["convert", s(video), "--fps", "400", "--verify"]);
    go(&["report", s(&out.join("evs_latency"))]);
    stdouts
}

#[test]
fn outputs_do_not_depend_on_thread_count() {
    let src = tempfile::tempdir().unwrap();
    let video = write_ppm_sequence(src.path(), 12, 16, 8);
    let a = tempfile::tempdir().unwrap();
    let b = tempfile::tempdir().unwrap();
    let out_a = all_commands(a.path(), "1", &video);
    let out_b = all_commands(b.path(), "8", &video);
    assert_eq!(out_a, out_b);
    let (ta, tb) = (tree(a.path()), tree(b.path()));
    assert!(!ta.is_empty());
    assert_eq!(ta.len(), tb.len());
    for ((pa, da), (pb, db)) in ta.iter().zip(&tb) {
        assert_eq!(pa, pb);
        assert!(da == db, "{} differs between --jobs 1 and --jobs 8", pa.display());
    }
}
