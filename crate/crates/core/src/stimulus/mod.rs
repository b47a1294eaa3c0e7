//! Procedural test stimuli and external video ingest.
//!
//! Everything here produces [`TargetFrame`]s: normalized radiance maps on the
//! COP pixel grid, `u = 0` for a dark pixel and `u = 1` for full DMD duty.

mod video;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use video::{
    decode_bvsf, decode_pnm, encode_bvsf, encode_pgm, load_video, read_source, resample_area,
    LoadOptions, SourceFrame, SourceSequence,
};

/// Sensor grid in COP pixels.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Grid {
    pub width: usize,
    pub height: usize,
}

impl Grid {
    pub const fn new(width: usize, height: usize) -> Self {
        Self { width, height }
    }

    pub fn len(&self) -> usize {
        self.width * self.height
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

impl Default for Grid {
    fn default() -> Self {
        Grid::new(320, 160)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TargetFrame {
    pub width: usize,
    pub height: usize,
    /// Row-major, every value in `[0, 1]`.
    pub radiance: Vec<f64>,
    pub t_start_ns: u64,
    pub duration_ns: u64,
}

impl TargetFrame {
    pub fn new(
        width: usize,
        height: usize,
        radiance: Vec<f64>,
        t_start_ns: u64,
        duration_ns: u64,
    ) -> Result<Self> {
        let frame = Self {
            width,
            height,
            radiance,
            t_start_ns,
            duration_ns,
        };
        frame.validate()?;
        Ok(frame)
    }

    pub fn uniform(grid: Grid, u: f64, t_start_ns: u64, duration_ns: u64) -> Result<Self> {
        Self::new(
            grid.width,
            grid.height,
            vec![u; grid.len()],
            t_start_ns,
            duration_ns,
        )
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.width, self.height)
    }

    #[inline]
    pub fn at(&self, x: usize, y: usize) -> f64 {
        self.radiance[y * self.width + x]
    }

    pub fn validate(&self) -> Result<()> {
        if self.width == 0 || self.height == 0 {
            return Err(Error::invalid("frame.size", "width and height must be nonzero"));
        }
        if self.radiance.len() != self.width * self.height {
            return Err(Error::Geometry(format!(
                "radiance has {} values for a {}x{} frame",
                self.radiance.len(),
                self.width,
                self.height
            )));
        }
        if self.duration_ns == 0 {
            return Err(Error::invalid("frame.duration_ns", "must be > 0"));
        }
        if let Some(bad) = self.radiance.iter().find(|u| !(0.0..=1.0).contains(*u)) {
            return Err(Error::invalid(
                "frame.radiance",
                format!("value {bad} outside [0, 1]"),
            ));
        }
        Ok(())
    }
}

/// Check that frames tile time without gaps or overlap.
pub fn check_contiguous(frames: &[TargetFrame]) -> Result<()> {
    for w in frames.windows(2) {
        if w[0].t_start_ns + w[0].duration_ns != w[1].t_start_ns {
            return Err(Error::Timing(format!(
                "frame at {} ns does not follow frame ending at {} ns",
                w[1].t_start_ns,
                w[0].t_start_ns + w[0].duration_ns
            )));
        }
    }
    Ok(())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Channel {
    R,
    G,
    B,
}

impl Channel {
    pub const ALL: [Channel; 3] = [Channel::R, Channel::G, Channel::B];

    pub fn index(self) -> usize {
        match self {
            Channel::R => 0,
            Channel::G => 1,
            Channel::B => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum StimulusKind {
    Uniform {
        level: f64,
    },
    /// Linear ramp in time from `from` (first frame) to `to` (last frame).
    Ramp {
        from: f64,
        to: f64,
    },
    /// `before` through frame `step_after_frame` inclusive, `after` from then on.
    Step {
        before: f64,
        after: f64,
        step_after_frame: u32,
    },
    /// Two spoke wheels side by side; the left one is static, the right one
    /// turns at `angular_velocity` rad/s about its own center.
    RotatingPattern {
        angular_velocity: f64,
        #[serde(default = "default_spokes")]
        spokes: u32,
        #[serde(default)]
        low: f64,
        #[serde(default = "default_high")]
        high: f64,
    },
    /// A deterministic subset of pixels square-wave flickers between `low`
    /// and `high`; the rest hold `low`.
    FlickerGrid {
        active_fraction: f64,
        low: f64,
        high: f64,
        frequency_hz: f64,
    },
    Video {
        path: PathBuf,
        #[serde(default)]
        channel: Option<Channel>,
    },
}

fn default_spokes() -> u32 {
    6
}

fn default_high() -> f64 {
    1.0
}

impl Default for StimulusKind {
    fn default() -> Self {
        StimulusKind::Uniform { level: 0.5 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StimulusProgram {
    pub kind: StimulusKind,
    pub grid: Grid,
    pub frame_period_ns: u64,
    pub t0_ns: u64,
}

fn unit(field: &str, v: f64) -> Result<()> {
    if (0.0..=1.0).contains(&v) {
        Ok(())
    } else {
        Err(Error::invalid(field, format!("{v} outside [0, 1]")))
    }
}

impl StimulusKind {
    pub fn validate(&self) -> Result<()> {
        match self {
            StimulusKind::Uniform { level } => unit("stimulus.level", *level),
            StimulusKind::Ramp { from, to } => {
                unit("stimulus.from", *from)?;
                unit("stimulus.to", *to)
            }
            StimulusKind::Step { before, after, .. } => {
                unit("stimulus.before", *before)?;
                unit("stimulus.after", *after)
            }
            StimulusKind::RotatingPattern {
                angular_velocity,
                spokes,
                low,
                high,
            } => {
                unit("stimulus.low", *low)?;
                unit("stimulus.high", *high)?;
                if !angular_velocity.is_finite() {
                    return Err(Error::invalid("stimulus.angular_velocity", "must be finite"));
                }
                if *spokes == 0 {
                    return Err(Error::invalid("stimulus.spokes", "must be >= 1"));
                }
                Ok(())
            }
            StimulusKind::FlickerGrid {
                active_fraction,
                low,
                high,
                frequency_hz,
            } => {
                unit("stimulus.low", *low)?;
                unit("stimulus.high", *high)?;
                if !(*active_fraction > 0.0 && *active_fraction <= 1.0) {
                    return Err(Error::invalid(
                        "stimulus.active_fraction",
                        format!("{active_fraction} outside (0, 1]"),
                    ));
                }
                if !(frequency_hz.is_finite() && *frequency_hz > 0.0) {
                    return Err(Error::invalid("stimulus.frequency_hz", "must be > 0"));
                }
                Ok(())
            }
            StimulusKind::Video { .. } => Ok(()),
        }
    }
}

/// Produce exactly `n_frames` frames for `program`.
///
/// Procedural kinds are pure functions of their parameters. Video sources
/// shorter than `n_frames` hold their last frame.
pub fn generate(program: &StimulusProgram, n_frames: usize) -> Result<Vec<TargetFrame>> {
    if n_frames == 0 {
        return Err(Error::invalid("n_frames", "must be >= 1"));
    }
    if program.grid.is_empty() {
        return Err(Error::invalid("grid", "width and height must be nonzero"));
    }
    if program.frame_period_ns == 0 {
        return Err(Error::invalid("frame_period_ns", "must be > 0"));
    }
    program.kind.validate()?;
    let grid = program.grid;
    let period = program.frame_period_ns;
    let t = |k: usize| program.t0_ns + k as u64 * period;

    let radiance: Vec<Vec<f64>> = match &program.kind {
        StimulusKind::Uniform { level } => vec![vec![*level; grid.len()]; n_frames],
        StimulusKind::Ramp { from, to } => (0..n_frames)
            .map(|k| {
                let f = if n_frames == 1 {
                    0.0
                } else {
                    k as f64 / (n_frames - 1) as f64
                };
                vec![(from + (to - from) * f).clamp(0.0, 1.0); grid.len()]
            })
            .collect(),
        StimulusKind::Step {
            before,
            after,
            step_after_frame,
        } => (0..n_frames)
            .map(|k| {
                let u = if k as u64 <= *step_after_frame as u64 {
                    *before
                } else {
                    *after
                };
                vec![u; grid.len()]
            })
            .collect(),
        StimulusKind::RotatingPattern {
            angular_velocity,
            spokes,
            low,
            high,
        } => {
            let base = spoke_pattern(grid, *spokes, *low, *high);
            (0..n_frames)
                .map(|k| {
                    let angle = angular_velocity * (k as u64 * period) as f64 * 1e-9;
                    rotate_right_half(&base, grid, angle, *low)
                })
                .collect()
        }
        StimulusKind::FlickerGrid {
            active_fraction,
            low,
            high,
            frequency_hz,
        } => {
            let mask = flicker_mask(grid, *active_fraction);
            (0..n_frames)
                .map(|k| {
                    let t_s = (k as u64 * period) as f64 * 1e-9;
                    let phase = (2.0 * frequency_hz * t_s).floor() as u64;
                    let on = phase % 2 == 1;
                    mask.iter()
                        .map(|&active| if active && on { *high } else { *low })
                        .collect()
                })
                .collect()
        }
        StimulusKind::Video { path, channel } => {
            let opts = LoadOptions {
                channel: *channel,
                frame_period_ns: period,
                t0_ns: program.t0_ns,
            };
            let frames = load_video(path, grid, &opts)?;
            let last = frames.len() - 1;
            (0..n_frames)
                .map(|k| frames[k.min(last)].radiance.clone())
                .collect()
        }
    };

    radiance
        .into_iter()
        .enumerate()
        .map(|(k, r)| TargetFrame::new(grid.width, grid.height, r, t(k), period))
        .collect()
}

/// Pixels that flicker in a [`StimulusKind::FlickerGrid`].
///
/// Selection uses a multiplicative hash of the pixel index so the active set
/// is spread over the grid without any RNG.
pub fn flicker_mask(grid: Grid, fraction: f64) -> Vec<bool> {
    (0..grid.len())
        .map(|i| {
            let h = (i as u64).wrapping_mul(2_654_435_761) & 0xFFFF_FFFF;
            (h as f64 / 4_294_967_296.0) < fraction
        })
        .collect()
}

/// Both halves of the grid carry the same spoke wheel.
fn spoke_pattern(grid: Grid, spokes: u32, low: f64, high: f64) -> Vec<f64> {
    let half = grid.width / 2;
    let mut out = vec![low; grid.len()];
    for (x0, w) in [(0, half), (half, grid.width - half)] {
        let cx = (w as f64 - 1.0) / 2.0;
        let cy = (grid.height as f64 - 1.0) / 2.0;
        let radius = 0.45 * (w.min(grid.height) as f64);
        for y in 0..grid.height {
            for x in 0..w {
                let dx = x as f64 - cx;
                let dy = y as f64 - cy;
                if dx * dx + dy * dy > radius * radius {
                    continue;
                }
                let phi = dy.atan2(dx) + std::f64::consts::PI;
                let sector = (phi * spokes as f64 / std::f64::consts::PI).floor() as i64;
                if sector.rem_euclid(2) == 0 {
                    out[y * grid.width + x0 + x] = high;
                }
            }
        }
    }
    out
}

/// Nearest-neighbour rotation of the right half about its own center; the
/// left half is copied through untouched.
fn rotate_right_half(base: &[f64], grid: Grid, angle: f64, fill: f64) -> Vec<f64> {
    let half = grid.width / 2;
    let w = grid.width - half;
    let h = grid.height;
    let cx = (w as f64 - 1.0) / 2.0;
    let cy = (h as f64 - 1.0) / 2.0;
    let (s, c) = angle.sin_cos();
    let mut out = base.to_vec();
    for y in 0..h {
        for x in 0..w {
            let dx = x as f64 - cx;
            let dy = y as f64 - cy;
            // inverse map: sample the source at R(-angle) * (p - c) + c
            let sx = (c * dx + s * dy + cx).round();
            let sy = (-s * dx + c * dy + cy).round();
            let v = if sx >= 0.0 && sy >= 0.0 && (sx as usize) < w && (sy as usize) < h {
                base[sy as usize * grid.width + half + sx as usize]
            } else {
                fill
            };
            out[y * grid.width + half + x] = v;
        }
    }
    out
}
