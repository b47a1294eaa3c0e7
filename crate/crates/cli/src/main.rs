//! `bvsbench`: encode stimuli, simulate sensors, run characterization
//! protocols, convert footage and render reports.

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use bvsbench_core::bench::{Bench, SensorRun, Sensors};
use bvsbench_core::characterize::report::{canonical_json, render_dir};
use bvsbench_core::characterize::{self, Protocol};
use bvsbench_core::config::BenchConfig;
use bvsbench_core::dataset::{self, BvsDataset};
use bvsbench_core::encoder::{DitherPolicy, DmdsHeader, Encoder, PlaneStreamReader, PlaneStreamWriter};
use bvsbench_core::stimulus::{self, read_source, StimulusKind, TargetFrame};
use bvsbench_core::{temp_file_in, write_atomic, Error, Result};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser, Debug)]
#[command(name = "bvsbench", version, about = "DMD-based characterization bench for brain-inspired vision sensors")]
struct Cli {
    /// TOML bench configuration; defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory (overrides `output_dir` in the configuration).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Top-level seed (overrides `seed` in the configuration).
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads; results do not depend on it.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Format of the summary printed to stdout and of optional tabular files.
    #[arg(long, global = true, value_enum, default_value_t = Format::Json)]
    format: Format,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum)]
enum SensorArg {
    Tianmouc,
    Evs,
    Both,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Encode the configured stimulus into a DMD plane stream (planes.dmds).
    Encode {
        #[command(flatten)]
        stim: StimulusArgs,
    },
    /// Run sensor models on a plane stream or on the configured stimulus.
    Simulate {
        /// Plane stream produced by `encode`.
        #[arg(long, conflicts_with_all = ["level", "video"])]
        planes: Option<PathBuf>,
        #[command(flatten)]
        stim: StimulusArgs,
        #[arg(long, value_enum, default_value_t = SensorArg::Both)]
        sensor: SensorArg,
    },
    /// Run one characterization protocol.
    Characterize {
        /// linearity, uniformity, snr_dr, photon_transfer, evs_latency,
        /// evs_contrast_threshold, event_saturation or diff_snr
        protocol: String,
    },
    /// Convert RGB footage (PNM file, directory of PNM files, or BVSF) into a dataset.
    Convert {
        video: PathBuf,
        /// Source frame rate (overrides `dataset.source_fps`).
        #[arg(long)]
        fps: Option<f64>,
        /// Also compare the COP reconstruction with the source.
        #[arg(long)]
        verify: bool,
    },
    /// Render SVG plots and CSV tables for every report under a directory.
    Report { dir: PathBuf },
}

#[derive(clap::Args, Debug)]
struct StimulusArgs {
    /// Uniform duty level instead of the configured pattern.
    #[arg(long, conflicts_with = "video")]
    level: Option<f64>,
    /// Video file or directory instead of the configured pattern.
    #[arg(long)]
    video: Option<PathBuf>,
    /// Number of AOP frames (overrides `stimulus.frames`).
    #[arg(long)]
    frames: Option<usize>,
}

fn load_config(cli: &Cli) -> Result<BenchConfig> {
    let mut cfg = match &cli.config {
        Some(p) => BenchConfig::load(p)?,
        None => BenchConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    if let Some(out) = &cli.out {
        cfg.output_dir = out.clone();
    }
    cfg.validate()?;
    Ok(cfg)
}

fn stimulus_frames(cfg: &BenchConfig, args: &StimulusArgs) -> Result<Vec<TargetFrame>> {
    let mut program = cfg.stimulus_program();
    if let Some(level) = args.level {
        program.kind = StimulusKind::Uniform { level };
    }
    if let Some(path) = &args.video {
        program.kind = StimulusKind::Video {
            path: path.clone(),
            channel: None,
        };
    }
    stimulus::generate(&program, args.frames.unwrap_or(cfg.stimulus.frames))
}

/// Stream `frames` into `path` as DMDS, replacing it atomically.
fn write_planes(cfg: &BenchConfig, frames: &[TargetFrame], path: &Path) -> Result<()> {
    let mapping = cfg.block_mapping()?;
    let encoder = Encoder::new(&mapping, &cfg.timing, &DitherPolicy::bayer(mapping.k_cop)?)?;
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let tmp = temp_file_in(dir)?;
    let header = DmdsHeader {
        width: mapping.dmd_width,
        height: mapping.dmd_height,
        plane_count: u32::try_from(frames.len() * encoder.planes_per_frame())
            .map_err(|_| Error::invalid("stimulus.frames", "too many planes for one stream"))?,
        plane_period_ns: cfg.timing.plane_period_ns,
        t0_ns: frames.first().map_or(0, |f| f.t_start_ns) + cfg.timing.trigger_offset_ns,
    };
    let mut w = PlaneStreamWriter::new(BufWriter::new(tmp), header)?;
    for f in frames {
        w.write_planes(&encoder.encode_frame(f)?)?;
    }
    let tmp = w
        .finish()?
        .into_inner()
        .map_err(|e| Error::io(path, e.into_error()))?;
    tmp.persist(path).map_err(|e| Error::io(path, e.error))?;
    Ok(())
}

fn cmd_encode(cfg: &BenchConfig, args: &StimulusArgs) -> Result<Vec<PathBuf>> {
    let frames = stimulus_frames(cfg, args)?;
    let path = cfg.output_dir.join("planes.dmds");
    write_planes(cfg, &frames, &path)?;
    log::info!("encoded {} frames", frames.len());
    Ok(vec![path])
}

fn cmd_simulate(
    cfg: &BenchConfig,
    planes: Option<&Path>,
    args: &StimulusArgs,
    sensor: SensorArg,
    format: Format,
) -> Result<Vec<PathBuf>> {
    let bench = Bench::from_config(cfg)?;
    let sensors = Sensors {
        tianmouc: sensor != SensorArg::Evs,
        evs: sensor != SensorArg::Tianmouc,
    };
    let run = match planes {
        Some(path) => {
            let file = File::open(path).map_err(|e| Error::io(path, e))?;
            let mut reader = PlaneStreamReader::new(BufReader::new(file))?;
            let h = reader.header;
            let mapping = bench.mapping();
            if (h.width, h.height) != (mapping.dmd_width, mapping.dmd_height) {
                return Err(Error::Geometry(format!(
                    "stream is {}x{} mirrors, configuration expects {}x{}",
                    h.width, h.height, mapping.dmd_width, mapping.dmd_height
                )));
            }
            if h.plane_period_ns != cfg.timing.plane_period_ns {
                return Err(Error::Timing(format!(
                    "stream plane period {} ns, configuration says {} ns",
                    h.plane_period_ns, cfg.timing.plane_period_ns
                )));
            }
            let m = bench.planes_per_frame();
            if h.plane_count as usize % m != 0 {
                return Err(Error::Timing(format!(
                    "{} planes are not a whole number of AOP frames ({m} planes each)",
                    h.plane_count
                )));
            }
            let mut run = SensorRun::new(&bench, h.t0_ns, sensors)?;
            let mut chunk = Vec::new();
            let mut count = 0;
            while let Some(p) = reader.next_plane()? {
                chunk.extend_from_slice(&p);
                count += 1;
                if count == m {
                    run.push_frame(&bench.project_bits(&chunk)?)?;
                    chunk.clear();
                    count = 0;
                }
            }
            run
        }
        None => {
            let frames = stimulus_frames(cfg, args)?;
            let t0 = frames[0].t_start_ns + cfg.timing.trigger_offset_ns;
            let mut run = SensorRun::new(&bench, t0, sensors)?;
            for f in &frames {
                run.push_frame(&bench.frame_planes(f)?)?;
            }
            run
        }
    };
    let (tianmouc, evs) = run.finish()?;
    let dir = &cfg.output_dir;
    let mut written = Vec::new();
    if let Some(streams) = tianmouc {
        let p = dir.join("tianmouc.tmoc");
        write_atomic(&p, &streams.to_bytes())?;
        written.push(p);
    }
    if let Some((events, stats)) = evs {
        let p = dir.join("events.evt1");
        write_atomic(&p, &events.to_bytes())?;
        written.push(p);
        let p = dir.join("evs_stats.json");
        write_atomic(&p, canonical_json(&serde_json::to_value(&stats).expect("stats")).as_bytes())?;
        written.push(p);
        if format == Format::Csv {
            let p = dir.join("events.csv");
            write_atomic(&p, events.to_csv().as_bytes())?;
            written.push(p);
        }
    }
    Ok(written)
}

fn cmd_characterize(cfg: &BenchConfig, name: &str, format: Format) -> Result<Vec<PathBuf>> {
    let protocol: Protocol = name.parse()?;
    let report = characterize::run(cfg, protocol)?;
    let dir = report.write(&cfg.output_dir)?;
    let mut out = std::io::stdout().lock();
    let summary = match format {
        Format::Json => canonical_json(&report.metrics),
        Format::Csv => report.tables.first().map(|t| t.to_csv()).unwrap_or_default(),
    };
    out.write_all(summary.as_bytes()).map_err(|e| Error::io("<stdout>", e))?;
    Ok(vec![dir])
}

fn cmd_convert(cfg: &BenchConfig, video: &Path, fps: Option<f64>, verify: bool) -> Result<Vec<PathBuf>> {
    let mut cfg = cfg.clone();
    if fps.is_some() {
        cfg.dataset.source_fps = fps;
    }
    let source = read_source(video)?;
    let data = dataset::convert(&source, &cfg)?;
    let dir = cfg.output_dir.join("dataset");
    data.write(&dir)?;
    let mut written = vec![dir.clone()];
    if verify {
        let loaded = BvsDataset::load(&dir)?;
        let report = dataset::verify_roundtrip(&loaded, &source, &cfg)?;
        let p = cfg.output_dir.join("fidelity.json");
        write_atomic(&p, canonical_json(&serde_json::to_value(&report).expect("report")).as_bytes())?;
        written.push(p);
    }
    Ok(written)
}

fn run(cli: &Cli) -> Result<Vec<PathBuf>> {
    if let Command::Report { dir } = &cli.command {
        return render_dir(dir);
    }
    let cfg = load_config(cli)?;
    match &cli.command {
        Command::Encode { stim } => cmd_encode(&cfg, stim),
        Command::Simulate { planes, stim, sensor } => cmd_simulate(&cfg, planes.as_deref(), stim, *sensor, cli.format),
        Command::Characterize { protocol } => cmd_characterize(&cfg, protocol, cli.format),
        Command::Convert { video, fps, verify } => cmd_convert(&cfg, video, *fps, *verify),
        Command::Report { .. } => unreachable!("handled above"),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::new().filter_or("BVSBENCH_LOG", "warn")).init();
    let cli = Cli::parse();
    if let Some(jobs) = cli.jobs {
        if jobs == 0 {
            eprintln!("error: --jobs must be >= 1");
            return ExitCode::from(2);
        }
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(jobs).build_global() {
            eprintln!("error: {e}");
            return ExitCode::from(1);
        }
    }
    match run(&cli) {
        Ok(paths) => {
            for p in paths {
                log::info!("wrote {}", p.display());
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
