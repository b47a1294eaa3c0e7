//! Video ingest: binary PNM sequences and the raw `BVSF` container.
//!
//! `BVSF` layout (little-endian):
//!
//! ```text
//! offset 0   magic  "BVSF"
//!        4   u32    width
//!        8   u32    height
//!        12  u32    frame count
//!        16  u16[width * height] per frame, 65535 <-> u = 1
//! ```

use std::path::{Path, PathBuf};

use image::DynamicImage;

use super::{Channel, Grid, TargetFrame};
use crate::binio::{checked_len, put_u16, put_u32, ByteReader};
use crate::error::{Error, Result};

const BVSF_MAGIC: &[u8; 4] = b"BVSF";

/// A decoded source image, normalized to `[0, 1]`, one or three channels.
#[derive(Clone, Debug, PartialEq)]
pub struct SourceFrame {
    pub width: usize,
    pub height: usize,
    pub channels: Vec<Vec<f64>>,
}

impl SourceFrame {
    pub fn gray(width: usize, height: usize, values: Vec<f64>) -> Self {
        Self {
            width,
            height,
            channels: vec![values],
        }
    }

    pub fn rgb(width: usize, height: usize, r: Vec<f64>, g: Vec<f64>, b: Vec<f64>) -> Self {
        Self {
            width,
            height,
            channels: vec![r, g, b],
        }
    }

    pub fn is_color(&self) -> bool {
        self.channels.len() == 3
    }

    /// Single plane: the requested channel, or the channel mean.
    pub fn plane(&self, channel: Option<Channel>) -> Vec<f64> {
        match (channel, self.is_color()) {
            (_, false) => self.channels[0].clone(),
            (Some(c), true) => self.channels[c.index()].clone(),
            (None, true) => (0..self.width * self.height)
                .map(|i| (self.channels[0][i] + self.channels[1][i] + self.channels[2][i]) / 3.0)
                .collect(),
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct SourceSequence {
    pub frames: Vec<SourceFrame>,
}

#[derive(Clone, Debug)]
pub struct LoadOptions {
    /// Extract one color channel instead of reducing to the channel mean.
    pub channel: Option<Channel>,
    pub frame_period_ns: u64,
    pub t0_ns: u64,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            channel: None,
            frame_period_ns: 1_321_004,
            t0_ns: 0,
        }
    }
}

/// Decode one binary PNM image (`P5` graymap or `P6` pixmap).
pub fn decode_pnm(bytes: &[u8]) -> Result<SourceFrame> {
    if bytes.len() < 2 || !(bytes.starts_with(b"P5") || bytes.starts_with(b"P6")) {
        return Err(Error::Format(
            "expected a binary graymap (P5) or pixmap (P6)".into(),
        ));
    }
    let img = image::load_from_memory_with_format(bytes, image::ImageFormat::Pnm)
        .map_err(|e| Error::Format(format!("pnm: {e}")))?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(Error::invalid("video.size", "dimension zero"));
    }
    let frame = match img {
        DynamicImage::ImageLuma8(b) => {
            SourceFrame::gray(w, h, b.as_raw().iter().map(|&v| v as f64 / 255.0).collect())
        }
        DynamicImage::ImageLuma16(b) => {
            SourceFrame::gray(w, h, b.as_raw().iter().map(|&v| v as f64 / 65535.0).collect())
        }
        DynamicImage::ImageRgb8(b) => split_rgb(w, h, b.as_raw(), 255.0),
        DynamicImage::ImageRgb16(b) => split_rgb(w, h, b.as_raw(), 65535.0),
        other => {
            let rgb = other.to_rgb16();
            split_rgb(w, h, rgb.as_raw(), 65535.0)
        }
    };
    Ok(frame)
}

fn split_rgb<T: Copy + Into<f64>>(w: usize, h: usize, raw: &[T], scale: f64) -> SourceFrame {
    let mut planes = [
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
        Vec::with_capacity(w * h),
    ];
    for px in raw.chunks_exact(3) {
        for (c, plane) in planes.iter_mut().enumerate() {
            plane.push(px[c].into() / scale);
        }
    }
    let [r, g, b] = planes;
    SourceFrame::rgb(w, h, r, g, b)
}

pub fn decode_bvsf(bytes: &[u8]) -> Result<SourceSequence> {
    let mut r = ByteReader::new(bytes, "BVSF");
    r.magic(BVSF_MAGIC)?;
    let width = r.u32()? as usize;
    let height = r.u32()? as usize;
    let count = r.u32()? as usize;
    if width == 0 || height == 0 {
        return Err(Error::invalid("video.size", "dimension zero"));
    }
    let payload = checked_len("BVSF", &[width as u64, height as u64, count as u64, 2])?;
    if payload != r.remaining() {
        return Err(Error::Format(format!(
            "BVSF: header promises {payload} payload bytes, found {}",
            r.remaining()
        )));
    }
    let mut frames = Vec::with_capacity(count);
    for _ in 0..count {
        let data = r.take(width * height * 2)?;
        let values = data
            .chunks_exact(2)
            .map(|b| u16::from_le_bytes([b[0], b[1]]) as f64 / 65535.0)
            .collect();
        frames.push(SourceFrame::gray(width, height, values));
    }
    r.finish()?;
    Ok(SourceSequence { frames })
}

fn to_u16(u: f64) -> u16 {
    (u.clamp(0.0, 1.0) * 65535.0).round() as u16
}

pub fn encode_bvsf(frames: &[TargetFrame]) -> Result<Vec<u8>> {
    let first = frames
        .first()
        .ok_or_else(|| Error::invalid("frames", "empty sequence"))?;
    let (w, h) = (first.width, first.height);
    let mut out = Vec::with_capacity(16 + frames.len() * w * h * 2);
    out.extend_from_slice(BVSF_MAGIC);
    put_u32(&mut out, w as u32);
    put_u32(&mut out, h as u32);
    put_u32(&mut out, frames.len() as u32);
    for f in frames {
        if f.width != w || f.height != h {
            return Err(Error::Geometry("BVSF frames must share one size".into()));
        }
        for &u in &f.radiance {
            put_u16(&mut out, to_u16(u));
        }
    }
    Ok(out)
}

/// Binary graymap with the given maxval (255 for 8-bit, up to 65535).
pub fn encode_pgm(frame: &TargetFrame, maxval: u16) -> Vec<u8> {
    let mut out = format!("P5\n{} {}\n{}\n", frame.width, frame.height, maxval).into_bytes();
    let m = maxval as f64;
    for &u in &frame.radiance {
        let v = (u.clamp(0.0, 1.0) * m).round() as u16;
        if maxval < 256 {
            out.push(v as u8);
        } else {
            out.extend_from_slice(&v.to_be_bytes());
        }
    }
    out
}

fn is_pnm(p: &Path) -> bool {
    matches!(
        p.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase()),
        Some(ref e) if e == "pgm" || e == "ppm" || e == "pnm"
    )
}

/// Expand a path into the ordered list of files that make up a sequence.
///
/// A directory yields every PNM file inside it in name order. A file whose
/// stem ends in digits (`frame_0007.pgm`) yields all siblings with the same
/// prefix, digit count and extension, in numeric order.
fn sequence_paths(path: &Path) -> Result<Vec<PathBuf>> {
    if path.is_dir() {
        let mut files: Vec<PathBuf> = std::fs::read_dir(path)
            .map_err(|e| Error::io(path, e))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| is_pnm(p))
            .collect();
        files.sort();
        if files.is_empty() {
            return Err(Error::Format(format!("{}: no PNM frames", path.display())));
        }
        return Ok(files);
    }
    if !path.exists() {
        return Err(Error::io(
            path,
            std::io::Error::new(std::io::ErrorKind::NotFound, "no such file"),
        ));
    }
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("");
    let digits = stem.chars().rev().take_while(|c| c.is_ascii_digit()).count();
    if !is_pnm(path) || digits == 0 {
        return Ok(vec![path.to_path_buf()]);
    }
    let prefix = &stem[..stem.len() - digits];
    let ext = path.extension().and_then(|e| e.to_str()).unwrap_or("");
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    let mut numbered: Vec<(u64, PathBuf)> = std::fs::read_dir(&dir)
        .map_err(|e| Error::io(&dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter_map(|p| {
            let s = p.file_stem()?.to_str()?;
            let e = p.extension()?.to_str()?;
            let tail = s.strip_prefix(prefix)?;
            if e != ext || tail.len() != digits || !tail.bytes().all(|b| b.is_ascii_digit()) {
                return None;
            }
            Some((tail.parse().ok()?, p))
        })
        .collect();
    numbered.sort();
    Ok(numbered.into_iter().map(|(_, p)| p).collect())
}

/// Read a source sequence without resampling.
pub fn read_source(path: &Path) -> Result<SourceSequence> {
    let files = sequence_paths(path)?;
    let mut seq = SourceSequence::default();
    for f in files {
        let bytes = std::fs::read(&f).map_err(|e| Error::io(&f, e))?;
        if bytes.starts_with(BVSF_MAGIC) {
            seq.frames.extend(decode_bvsf(&bytes)?.frames);
        } else {
            seq.frames.push(decode_pnm(&bytes)?);
        }
    }
    if seq.frames.is_empty() {
        return Err(Error::Format(format!("{}: no frames", path.display())));
    }
    Ok(seq)
}

/// Load a video onto `grid`: area-averaged resampling, then luma reduction
/// (channel mean) unless a single channel is requested.
pub fn load_video(path: &Path, grid: Grid, opts: &LoadOptions) -> Result<Vec<TargetFrame>> {
    if grid.is_empty() {
        return Err(Error::invalid("grid", "dimension zero"));
    }
    let seq = read_source(path)?;
    seq.frames
        .iter()
        .enumerate()
        .map(|(k, f)| {
            let plane = f.plane(opts.channel);
            let radiance = resample_area(&plane, f.width, f.height, grid.width, grid.height);
            TargetFrame::new(
                grid.width,
                grid.height,
                radiance,
                opts.t0_ns + k as u64 * opts.frame_period_ns,
                opts.frame_period_ns,
            )
        })
        .collect()
}

/// Per-axis overlap weights for box resampling `n_src -> n_dst`.
fn axis_weights(n_src: usize, n_dst: usize) -> Vec<Vec<(usize, f64)>> {
    let scale = n_src as f64 / n_dst as f64;
    (0..n_dst)
        .map(|d| {
            let lo = d as f64 * scale;
            let hi = (d + 1) as f64 * scale;
            let first = lo.floor() as usize;
            let last = (hi.ceil() as usize).min(n_src);
            (first..last)
                .filter_map(|s| {
                    let w = (hi.min(s as f64 + 1.0) - lo.max(s as f64)).max(0.0);
                    (w > 0.0).then_some((s, w))
                })
                .collect()
        })
        .collect()
}

/// Area-average resampling. Same-size input is copied bit-exactly.
pub fn resample_area(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    if sw == dw && sh == dh {
        return src.to_vec();
    }
    let wx = axis_weights(sw, dw);
    let wy = axis_weights(sh, dh);
    let mut out = Vec::with_capacity(dw * dh);
    for row in &wy {
        for col in &wx {
            let mut acc = 0.0;
            let mut area = 0.0;
            for &(sy, fy) in row {
                for &(sx, fx) in col {
                    acc += src[sy * sw + sx] * fx * fy;
                    area += fx * fy;
                }
            }
            out.push((acc / area).clamp(0.0, 1.0));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pgm8(w: usize, h: usize, v: &[u8]) -> Vec<u8> {
        let mut out = format!("P5\n{w} {h}\n255\n").into_bytes();
        out.extend_from_slice(v);
        out
    }

    #[test]
    fn constant_graymap_normalizes() {
        let f = decode_pnm(&pgm8(3, 2, &[128; 6])).unwrap();
        assert!(f.channels[0].iter().all(|&u| u == 128.0 / 255.0));
    }

    #[test]
    fn pixmap_channel_extraction() {
        let mut bytes = b"P6\n2 1\n255\n".to_vec();
        bytes.extend_from_slice(&[255, 0, 51, 102, 204, 0]);
        let f = decode_pnm(&bytes).unwrap();
        assert_eq!(f.plane(Some(Channel::R)), vec![1.0, 102.0 / 255.0]);
        assert_eq!(f.plane(Some(Channel::B)), vec![51.0 / 255.0, 0.0]);
        let luma = f.plane(None);
        assert!((luma[0] - (255.0 + 51.0) / 3.0 / 255.0).abs() < 1e-15);
    }

    #[test]
    fn area_average_two_by_two() {
        assert_eq!(resample_area(&[0.0, 1.0, 1.0, 0.0], 2, 2, 1, 1), vec![0.5]);
    }

    #[test]
    fn area_average_fractional_overlap() {
        // 3 -> 2: output 0 covers src[0] fully and half of src[1]
        let out = resample_area(&[0.0, 1.0, 0.5], 3, 1, 2, 1);
        assert!((out[0] - (0.0 + 0.5) / 1.5).abs() < 1e-12);
        assert!((out[1] - (0.5 + 0.5) / 1.5).abs() < 1e-12);
    }

    #[test]
    fn ascii_pnm_rejected() {
        assert!(matches!(decode_pnm(b"P2\n1 1\n255\n0\n"), Err(Error::Format(_))));
    }

    #[test]
    fn bvsf_rejects_short_payload() {
        let mut b = b"BVSF".to_vec();
        for v in [2u32, 2, 1] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        b.extend_from_slice(&[0; 6]);
        assert!(matches!(decode_bvsf(&b), Err(Error::Format(_))));
    }

    #[test]
    fn bvsf_rejects_zero_dimension() {
        let mut b = b"BVSF".to_vec();
        for v in [0u32, 2, 0] {
            b.extend_from_slice(&v.to_le_bytes());
        }
        assert!(matches!(decode_bvsf(&b), Err(Error::InvalidParameter { .. })));
    }

    #[test]
    fn numbered_sequence_is_discovered_in_order() {
        let dir = tempfile::tempdir().unwrap();
        for (i, v) in [(10u8, 30u8), (2, 10), (3, 20)] {
            std::fs::write(dir.path().join(format!("f_{i:03}.pgm")), pgm8(1, 1, &[v])).unwrap();
        }
        std::fs::write(dir.path().join("other.pgm"), pgm8(1, 1, &[99])).unwrap();
        let seq = read_source(&dir.path().join("f_002.pgm")).unwrap();
        let vals: Vec<f64> = seq.frames.iter().map(|f| f.channels[0][0] * 255.0).collect();
        assert_eq!(vals.len(), 3);
        assert!((vals[0] - 10.0).abs() < 1e-9 && (vals[2] - 30.0).abs() < 1e-9);
    }
}
