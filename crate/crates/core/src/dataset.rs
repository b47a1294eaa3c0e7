//! Conversion of RGB footage into dual-pathway datasets.
//!
//! Each color channel is projected on its own; the COP mosaic takes every
//! pixel from the channel of its Bayer site, and the AOP pathway sees the
//! merged (channel mean or maximum) projection. One record covers one COP
//! period: one COP frame plus `cop_ratio` AOP frames.
//!
//! Layout on disk:
//!
//! ```text
//! manifest.json          canonical JSON, written last
//! index.csv              record,source_first,source_last,sha256
//! records/000000.tmoc    one TMOC stream per record
//! ```
//!
//! The source is sampled and held: AOP frame `n` shows source frame
//! `floor(n * aop_period * fps)`.

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::bench::Bench;
use crate::characterize::report::canonical_json;
use crate::config::{AopMerge, BenchConfig};
use crate::error::{Error, Result};
use crate::stimulus::{resample_area, SourceFrame, SourceSequence};
use crate::stimulus::{Grid, TargetFrame};
use crate::tianmouc::{AopFrame, BayerSite, CopFrame, PathwayStreams, Tianmouc};
use crate::write_atomic;

pub const MANIFEST_FILE: &str = "manifest.json";
pub const INDEX_FILE: &str = "index.csv";
pub const RECORDS_DIR: &str = "records";
pub const FORMAT_NAME: &str = "bvsbench-dataset";
pub const FORMAT_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RecordEntry {
    pub id: usize,
    pub file: String,
    pub source_first: usize,
    pub source_last: usize,
    pub sha256: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub record_count: usize,
    pub grid: Grid,
    pub cop_ratio: u32,
    pub aop_frame_period_ns: u64,
    pub source_fps: f64,
    pub source_frames: usize,
    pub source_width: usize,
    pub source_height: usize,
    pub aop_merge: AopMerge,
    pub bayer_gains: [f64; 3],
    pub config_hash: String,
    pub seed: u64,
    pub config: serde_json::Value,
    pub records: Vec<RecordEntry>,
}

impl Manifest {
    pub fn to_json(&self) -> String {
        canonical_json(&serde_json::to_value(self).expect("manifest serializes"))
    }

    /// Parse and check internal consistency.
    pub fn from_json(text: &str) -> Result<Self> {
        let m: Manifest = serde_json::from_str(text).map_err(|e| Error::Manifest(format!("manifest: {e}")))?;
        m.check()?;
        Ok(m)
    }

    fn check(&self) -> Result<()> {
        if self.format != FORMAT_NAME || self.version != FORMAT_VERSION {
            return Err(Error::Manifest(format!(
                "unsupported format {} v{}",
                self.format, self.version
            )));
        }
        if self.records.len() != self.record_count {
            return Err(Error::Manifest(format!(
                "record_count {} but {} records listed",
                self.record_count,
                self.records.len()
            )));
        }
        for (i, r) in self.records.iter().enumerate() {
            if r.id != i || r.file != record_file(i) {
                return Err(Error::Manifest(format!("record {i} is listed as {} ({})", r.id, r.file)));
            }
            if r.source_first > r.source_last || r.source_last >= self.source_frames {
                return Err(Error::Manifest(format!("record {i} has source range outside the source")));
            }
        }
        if self.grid.is_empty() || self.cop_ratio == 0 {
            return Err(Error::Manifest("empty grid or zero cop_ratio".into()));
        }
        Ok(())
    }
}

/// One COP period of converted data.
#[derive(Clone, Debug, PartialEq)]
pub struct BvsRecord {
    pub id: usize,
    pub source_first: usize,
    pub source_last: usize,
    pub streams: PathwayStreams,
}

#[derive(Clone, Debug, PartialEq)]
pub struct BvsDataset {
    pub manifest: Manifest,
    pub records: Vec<BvsRecord>,
}

fn record_file(id: usize) -> String {
    format!("{RECORDS_DIR}/{id:06}.tmoc")
}

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

/// AOP frames that fit in the source, and the source frame shown in each.
struct Schedule {
    fps: f64,
    period_ns: u64,
    n_src: usize,
}

impl Schedule {
    fn source_index(&self, n: usize) -> usize {
        let s = (n as f64 * self.period_ns as f64 * 1e-9 * self.fps).floor() as usize;
        s.min(self.n_src - 1)
    }

    fn aop_frames(&self) -> usize {
        (self.n_src as f64 / self.fps * 1e9 / self.period_ns as f64).floor() as usize
    }
}

fn check_source(source: &SourceSequence) -> Result<(usize, usize)> {
    let first = source
        .frames
        .first()
        .ok_or_else(|| Error::invalid("source", "no frames"))?;
    let (w, h) = (first.width, first.height);
    if let Some((k, f)) = source
        .frames
        .iter()
        .enumerate()
        .find(|(_, f)| f.width != w || f.height != h || !(f.channels.len() == 1 || f.channels.len() == 3))
    {
        return Err(Error::Geometry(format!(
            "source frame {k} is {}x{} with {} channels, frame 0 is {w}x{h}",
            f.width,
            f.height,
            f.channels.len()
        )));
    }
    Ok((w, h))
}

/// Per-channel and merged radiance of one source frame on `grid`.
struct Planes {
    rgb: [Vec<f64>; 3],
    merged: Vec<f64>,
}

fn planes(f: &SourceFrame, grid: Grid, merge: &AopMerge) -> Planes {
    let channel = |c: usize| {
        let src = if f.channels.len() == 3 { &f.channels[c] } else { &f.channels[0] };
        resample_area(src, f.width, f.height, grid.width, grid.height)
    };
    let rgb = [channel(0), channel(1), channel(2)];
    let merged = (0..grid.len())
        .map(|i| match merge {
            AopMerge::Luma => (rgb[0][i] + rgb[1][i] + rgb[2][i]) / 3.0,
            AopMerge::Max => rgb[0][i].max(rgb[1][i]).max(rgb[2][i]),
        })
        .collect();
    Planes { rgb, merged }
}

/// Exposures of one source frame: per channel and merged.
struct Exposures {
    rgb: [Vec<f64>; 3],
    merged: Vec<f64>,
}

fn exposures(bench: &Bench, p: &Planes) -> Result<Exposures> {
    let expose = |r: &Vec<f64>| -> Result<Vec<f64>> {
        let frame = bench.frame(r.iter().map(|v| v.clamp(0.0, 1.0)).collect(), 0)?;
        bench.exposure(&frame)
    };
    Ok(Exposures {
        rgb: [expose(&p.rgb[0])?, expose(&p.rgb[1])?, expose(&p.rgb[2])?],
        merged: expose(&p.merged)?,
    })
}

fn convert_record(
    bench: &Bench,
    sim: &Tianmouc,
    source: &SourceSequence,
    schedule: &Schedule,
    merge: &AopMerge,
    t0: u64,
    r: usize,
) -> Result<BvsRecord> {
    let grid = bench.grid();
    let ratio = bench.timing().cop_ratio as usize;
    let period = bench.timing().aop_frame_period_ns;
    let first = r * ratio;
    let frames: Vec<usize> = (first.saturating_sub(1)..first + ratio).collect();

    let mut cache: BTreeMap<usize, Exposures> = BTreeMap::new();
    for &n in &frames {
        let s = schedule.source_index(n);
        if !cache.contains_key(&s) {
            let e = exposures(bench, &planes(&source.frames[s], grid, merge))?;
            cache.insert(s, e);
        }
    }

    let record_t0 = t0 + first as u64 * period;
    let mut streams = PathwayStreams::empty(grid, &bench.tianmouc, record_t0);
    let mut prev = (first > 0).then(|| sim.aop_intensity(&cache[&schedule.source_index(first - 1)].merged, first as u64 - 1));
    let mut cop_photons = vec![0.0; grid.len()];
    for (local, n) in (first..first + ratio).enumerate() {
        let e = &cache[&schedule.source_index(n)];
        let intensity = sim.aop_intensity(&e.merged, n as u64);
        let (td, sd) = sim.differences(&intensity, prev.as_deref());
        streams.aop.push(AopFrame {
            index: local as u64,
            timestamp_ns: record_t0 + local as u64 * period,
            width: grid.width / 2,
            height: grid.height / 2,
            td,
            sd,
        });
        prev = Some(intensity);
        for y in 0..grid.height {
            for x in 0..grid.width {
                let i = y * grid.width + x;
                cop_photons[i] += e.rgb[BayerSite::at(x, y).index()][i];
            }
        }
    }
    let cop = sim.cop_frame(&cop_photons, r as u64);
    streams.cop.push(CopFrame {
        index: 0,
        timestamp_ns: record_t0,
        ..cop
    });
    Ok(BvsRecord {
        id: r,
        source_first: schedule.source_index(first),
        source_last: schedule.source_index(first + ratio - 1),
        streams,
    })
}

/// Convert `source` with the bench described by `cfg`.
pub fn convert(source: &SourceSequence, cfg: &BenchConfig) -> Result<BvsDataset> {
    let (sw, sh) = check_source(source)?;
    let fps = cfg
        .dataset
        .source_fps
        .ok_or_else(|| Error::invalid("dataset.source_fps", "required for conversion"))?;
    if !(fps.is_finite() && fps > 0.0) {
        return Err(Error::invalid("dataset.source_fps", "must be > 0"));
    }
    let bench = Bench::from_config(cfg)?;
    let grid = bench.grid();
    let timing = bench.timing();
    let schedule = Schedule {
        fps,
        period_ns: timing.aop_frame_period_ns,
        n_src: source.frames.len(),
    };
    let ratio = timing.cop_ratio as usize;
    let count = schedule.aop_frames() / ratio;
    if count == 0 {
        return Err(Error::Precondition(format!(
            "{} source frames at {fps} fps are shorter than one COP period",
            source.frames.len()
        )));
    }
    let t0 = timing.trigger_offset_ns;
    let sim = Tianmouc::new(&bench.tianmouc, grid, t0)?;
    log::info!("converting {} source frames into {count} records", source.frames.len());
    let records = (0..count)
        .into_par_iter()
        .map(|r| convert_record(&bench, &sim, source, &schedule, &cfg.dataset.aop_merge, t0, r))
        .collect::<Result<Vec<_>>>()?;

    let entries = records
        .iter()
        .map(|r| RecordEntry {
            id: r.id,
            file: record_file(r.id),
            source_first: r.source_first,
            source_last: r.source_last,
            sha256: sha256_hex(&r.streams.to_bytes()),
        })
        .collect();
    let manifest = Manifest {
        format: FORMAT_NAME.into(),
        version: FORMAT_VERSION,
        record_count: count,
        grid,
        cop_ratio: timing.cop_ratio,
        aop_frame_period_ns: timing.aop_frame_period_ns,
        source_fps: fps,
        source_frames: source.frames.len(),
        source_width: sw,
        source_height: sh,
        aop_merge: cfg.dataset.aop_merge.clone(),
        bayer_gains: bench.tianmouc.bayer_gains,
        config_hash: cfg.hash(),
        seed: cfg.seed,
        config: cfg.canonical_json(),
        records: entries,
    };
    Ok(BvsDataset { manifest, records })
}

impl BvsDataset {
    pub fn index_csv(&self) -> String {
        let mut s = String::from("record,source_first,source_last,sha256\n");
        for r in &self.manifest.records {
            s.push_str(&format!("{},{},{},{}\n", r.id, r.source_first, r.source_last, r.sha256));
        }
        s
    }

    /// Write the dataset under `dir`. Any previous manifest is removed first
    /// and the new one is renamed into place last.
    pub fn write(&self, dir: &Path) -> Result<()> {
        let manifest = dir.join(MANIFEST_FILE);
        match std::fs::remove_file(&manifest) {
            Err(e) if e.kind() != std::io::ErrorKind::NotFound => return Err(Error::io(&manifest, e)),
            _ => {}
        }
        let records = dir.join(RECORDS_DIR);
        std::fs::create_dir_all(&records).map_err(|e| Error::io(&records, e))?;
        let keep: Vec<String> = self.manifest.records.iter().map(|r| r.file.clone()).collect();
        for entry in std::fs::read_dir(&records).map_err(|e| Error::io(&records, e))? {
            let path = entry.map_err(|e| Error::io(&records, e))?.path();
            let rel = format!(
                "{RECORDS_DIR}/{}",
                path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default()
            );
            if path.extension().is_some_and(|e| e == "tmoc") && !keep.contains(&rel) {
                std::fs::remove_file(&path).map_err(|e| Error::io(&path, e))?;
            }
        }
        self.records.par_iter().try_for_each(|r| {
            write_atomic(&dir.join(record_file(r.id)), &r.streams.to_bytes())
        })?;
        write_atomic(&dir.join(INDEX_FILE), self.index_csv().as_bytes())?;
        write_atomic(&manifest, self.manifest.to_json().as_bytes())
    }

    /// Read a dataset, checking every record against the manifest.
    pub fn load(dir: &Path) -> Result<Self> {
        let path = dir.join(MANIFEST_FILE);
        let text = std::fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
        let manifest = Manifest::from_json(&text)?;
        let records = manifest
            .records
            .iter()
            .map(|e| {
                let p = dir.join(&e.file);
                let bytes = std::fs::read(&p).map_err(|err| match err.kind() {
                    std::io::ErrorKind::NotFound => Error::Manifest(format!("record file {} is missing", e.file)),
                    _ => Error::io(&p, err),
                })?;
                if sha256_hex(&bytes) != e.sha256 {
                    return Err(Error::Manifest(format!("checksum mismatch for {}", e.file)));
                }
                let streams = PathwayStreams::from_bytes(&bytes)?;
                let g = manifest.grid;
                if streams.cop_width != g.width
                    || streams.cop_height != g.height
                    || streams.cop.len() != 1
                    || streams.aop.len() != manifest.cop_ratio as usize
                {
                    return Err(Error::Manifest(format!("{} does not hold one record on the manifest grid", e.file)));
                }
                Ok(BvsRecord {
                    id: e.id,
                    source_first: e.source_first,
                    source_last: e.source_last,
                    streams,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { manifest, records })
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct FidelityReport {
    pub records: usize,
    /// Mean absolute error per channel (R, G, B), duty units.
    pub mae: [f64; 3],
    /// Encoder quantization bound `1 / (2 M k^2)`.
    pub quantization_bound: f64,
    /// Half an ADC step per channel, duty units, at the least sensitive pixel.
    pub adc_half_step: [f64; 3],
    pub within_bound: bool,
}

/// Reconstruct RGB from the COP frames (per-channel average within each
/// 2x2 Bayer block) and compare with the source, averaged over each
/// record's exposure.
pub fn verify_roundtrip(dataset: &BvsDataset, source: &SourceSequence, cfg: &BenchConfig) -> Result<FidelityReport> {
    let m = &dataset.manifest;
    let (sw, sh) = check_source(source)?;
    if m.config_hash != cfg.hash() {
        return Err(Error::Manifest("dataset was converted with a different configuration".into()));
    }
    if m.source_frames != source.frames.len() || (m.source_width, m.source_height) != (sw, sh) {
        return Err(Error::Manifest(format!(
            "manifest describes {} frames of {}x{}, source has {} frames of {sw}x{sh}",
            m.source_frames,
            m.source_width,
            m.source_height,
            source.frames.len()
        )));
    }
    let bench = Bench::from_config(cfg)?;
    let grid = bench.grid();
    let ratio = bench.timing().cop_ratio as usize;
    let schedule = Schedule {
        fps: m.source_fps,
        period_ns: m.aop_frame_period_ns,
        n_src: source.frames.len(),
    };
    let expected = schedule.aop_frames() / ratio;
    if m.record_count != expected || dataset.records.len() != expected || m.grid != grid {
        return Err(Error::Manifest(format!(
            "manifest lists {} records ({} loaded) on {}x{}, the source yields {expected} on {}x{}",
            m.record_count,
            dataset.records.len(),
            m.grid.width,
            m.grid.height,
            grid.width,
            grid.height
        )));
    }

    let t = &bench.tianmouc;
    let full: Vec<f64> = bench
        .exposure(&TargetFrame::uniform(grid, 1.0, 0, bench.timing().aop_frame_period_ns)?)?
        .into_iter()
        .map(|p| p * ratio as f64)
        .collect();
    let dark_dn = t.adc_gain * t.dark_current * ratio as f64;
    let dn_per_u = |x: usize, y: usize| {
        let site = BayerSite::at(x, y).index();
        t.adc_gain * t.qe * t.bayer_gains[site] * full[y * grid.width + x]
    };
    let mut half_step = [0.0f64; 3];
    for y in 0..grid.height {
        for x in 0..grid.width {
            let s = BayerSite::at(x, y).index();
            half_step[s] = half_step[s].max(0.5 / dn_per_u(x, y));
        }
    }

    let mut sum = [0.0; 3];
    let mut count = [0usize; 3];
    for rec in &dataset.records {
        let mosaic = &rec.streams.cop[0].mosaic;
        let first = rec.id * ratio;
        let mut reference = [vec![0.0; grid.len()], vec![0.0; grid.len()], vec![0.0; grid.len()]];
        for n in first..first + ratio {
            let p = planes(&source.frames[schedule.source_index(n)], grid, &m.aop_merge);
            for c in 0..3 {
                for (a, v) in reference[c].iter_mut().zip(&p.rgb[c]) {
                    *a += v.clamp(0.0, 1.0) / ratio as f64;
                }
            }
        }
        for by in (0..grid.height).step_by(2) {
            for bx in (0..grid.width).step_by(2) {
                let mut rec_sum = [0.0; 3];
                let mut ref_sum = [0.0; 3];
                let mut n = [0usize; 3];
                for (x, y) in [(bx, by), (bx + 1, by), (bx, by + 1), (bx + 1, by + 1)] {
                    let i = y * grid.width + x;
                    let s = BayerSite::at(x, y).index();
                    rec_sum[s] += (mosaic[i] as f64 - t.black_level_dn - dark_dn) / dn_per_u(x, y);
                    ref_sum[s] += reference[s][i];
                    n[s] += 1;
                }
                for c in 0..3 {
                    sum[c] += ((rec_sum[c] - ref_sum[c]) / n[c] as f64).abs();
                    count[c] += 1;
                }
            }
        }
    }
    let mae = [0, 1, 2].map(|c| sum[c] / count[c] as f64);
    let m_planes = bench.planes_per_frame() as f64;
    let k = bench.mapping().k_cop as f64;
    let quantization_bound = 1.0 / (2.0 * m_planes * k * k);
    let within_bound = (0..3).all(|c| mae[c] <= quantization_bound + half_step[c]);
    Ok(FidelityReport {
        records: dataset.records.len(),
        mae,
        quantization_bound,
        adc_half_step: half_step,
        within_bound,
    })
}
