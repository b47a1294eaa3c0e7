//! Spatiotemporal duty encoding onto binary micromirror planes.
//!
//! Each COP pixel owns a `k x k` block of mirrors. Over one AOP frame the
//! DMD shows `M` planes, so a pixel has `M * k^2` mirror-time slots; the
//! analog level `u` becomes a count of "on" slots. The count is split as
//! evenly as possible across planes (temporal) and, inside each plane,
//! placed by an ordered-dither threshold matrix (spatial). Blocks never
//! interact, so encoding is embarrassingly parallel and exactly testable.

mod stream;

use num_integer::gcd;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stimulus::{check_contiguous, Grid, TargetFrame};

pub use stream::{
    row_stride, DmdsHeader, PlaneStream, PlaneStreamReader, PlaneStreamWriter, DMDS_HEADER_LEN,
    DMDS_MAGIC, DMDS_VERSION,
};
pub(crate) use stream::{get_bit, set_bit};

/// Sensor-pixel to mirror block mapping.
#[derive(Clone, Debug, PartialEq)]
pub struct BlockMapping {
    /// COP grid the mapping covers.
    pub grid: Grid,
    pub k_cop: u32,
    pub k_aop: u32,
    /// `[[a, b, tx], [c, d, ty]]`, mirror coordinates of a sensor pixel corner.
    /// Only axis-aligned scale by `k_cop` with integer offsets is supported.
    pub sensor_to_mirror: [[f64; 3]; 2],
    pub dmd_width: u32,
    pub dmd_height: u32,
}

impl BlockMapping {
    /// Mapping with the sensor footprint centered on the DMD.
    pub fn centered(grid: Grid, k_cop: u32, dmd_width: u32, dmd_height: u32) -> Result<Self> {
        let used_w = grid.width as u64 * k_cop as u64;
        let used_h = grid.height as u64 * k_cop as u64;
        if used_w > dmd_width as u64 || used_h > dmd_height as u64 {
            return Err(Error::invalid(
                "mapping",
                format!(
                    "{}x{} pixels at k={} need {}x{} mirrors, DMD has {}x{}",
                    grid.width, grid.height, k_cop, used_w, used_h, dmd_width, dmd_height
                ),
            ));
        }
        let ox = ((dmd_width as u64 - used_w) / 2) as f64;
        let oy = ((dmd_height as u64 - used_h) / 2) as f64;
        let k = k_cop as f64;
        let m = Self {
            grid,
            k_cop,
            k_aop: 2 * k_cop,
            sensor_to_mirror: [[k, 0.0, ox], [0.0, k, oy]],
            dmd_width,
            dmd_height,
        };
        m.validate()?;
        Ok(m)
    }

    /// Smallest DMD that fits the grid plus `margin` mirrors on each side.
    pub fn tight(grid: Grid, k_cop: u32, margin: u32) -> Result<Self> {
        let w = grid.width as u32 * k_cop + 2 * margin;
        let h = grid.height as u32 * k_cop + 2 * margin;
        Self::centered(grid, k_cop, w, h)
    }

    pub fn validate(&self) -> Result<()> {
        if self.grid.is_empty() {
            return Err(Error::invalid("grid", "dimension zero"));
        }
        if !matches!(self.k_cop, 1 | 2 | 4 | 8) {
            return Err(Error::invalid(
                "mapping.k_cop",
                format!("{} is not one of 1, 2, 4, 8", self.k_cop),
            ));
        }
        if self.k_aop != 2 * self.k_cop {
            return Err(Error::invalid(
                "mapping.k_aop",
                format!(
                    "k_aop = 2 x k_cop must hold (got k_aop = {}, k_cop = {})",
                    self.k_aop, self.k_cop
                ),
            ));
        }
        let [[a, b, tx], [c, d, ty]] = self.sensor_to_mirror;
        let k = self.k_cop as f64;
        if a != k || d != k || b != 0.0 || c != 0.0 {
            return Err(Error::invalid(
                "mapping.sensor_to_mirror",
                "linear part must be k_cop times identity",
            ));
        }
        if tx < 0.0 || ty < 0.0 || tx.fract() != 0.0 || ty.fract() != 0.0 {
            return Err(Error::invalid(
                "mapping.sensor_to_mirror",
                "offsets must be non-negative whole mirrors",
            ));
        }
        let (ox, oy) = self.origin();
        if ox + self.grid.width * self.k_cop as usize > self.dmd_width as usize
            || oy + self.grid.height * self.k_cop as usize > self.dmd_height as usize
        {
            return Err(Error::invalid(
                "mapping",
                "mapped blocks extend past the DMD extent",
            ));
        }
        Ok(())
    }

    pub fn origin(&self) -> (usize, usize) {
        (
            self.sensor_to_mirror[0][2] as usize,
            self.sensor_to_mirror[1][2] as usize,
        )
    }

    /// Top-left mirror of COP pixel `(x, y)`.
    #[inline]
    pub fn block_origin(&self, x: usize, y: usize) -> (usize, usize) {
        let (ox, oy) = self.origin();
        let k = self.k_cop as usize;
        (ox + k * x, oy + k * y)
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TimingConfig {
    pub plane_period_ns: u64,
    pub aop_frame_period_ns: u64,
    /// AOP frames per COP frame.
    pub cop_ratio: u32,
    pub trigger_offset_ns: u64,
}

impl Default for TimingConfig {
    fn default() -> Self {
        Self {
            plane_period_ns: 31_250,
            aop_frame_period_ns: 1_321_004,
            cop_ratio: 25,
            trigger_offset_ns: 0,
        }
    }
}

impl TimingConfig {
    /// `M`: binary planes shown per AOP frame.
    pub fn planes_per_aop_frame(&self) -> u32 {
        if self.plane_period_ns == 0 {
            return 0;
        }
        (self.aop_frame_period_ns / self.plane_period_ns) as u32
    }

    pub fn cop_frame_period_ns(&self) -> u64 {
        self.aop_frame_period_ns * self.cop_ratio as u64
    }

    pub fn validate(&self) -> Result<()> {
        if self.plane_period_ns == 0 {
            return Err(Error::invalid("timing.plane_period_ns", "must be > 0"));
        }
        if self.planes_per_aop_frame() < 1 {
            return Err(Error::invalid(
                "timing.aop_frame_period_ns",
                "must hold at least one plane period (M >= 1)",
            ));
        }
        if self.cop_ratio < 1 {
            return Err(Error::invalid("timing.cop_ratio", "must be >= 1"));
        }
        Ok(())
    }
}

/// Ordered-dither threshold matrix: a permutation of `0..k^2`, row-major.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct ThresholdMatrix {
    side: u32,
    values: Vec<u32>,
}

impl ThresholdMatrix {
    pub fn new(side: u32, values: Vec<u32>) -> Result<Self> {
        let n = (side * side) as usize;
        if values.len() != n {
            return Err(Error::invalid("dither.matrix", "needs side^2 entries"));
        }
        let mut seen = vec![false; n];
        for &v in &values {
            if v as usize >= n || std::mem::replace(&mut seen[v as usize], true) {
                return Err(Error::invalid(
                    "dither.matrix",
                    "must be a permutation of 0..side^2",
                ));
            }
        }
        Ok(Self { side, values })
    }

    /// Recursive Bayer matrix; `side` must be a power of two.
    pub fn bayer(side: u32) -> Result<Self> {
        if !side.is_power_of_two() {
            return Err(Error::invalid("dither.side", "must be a power of two"));
        }
        let mut m = vec![0u32];
        let mut s = 1usize;
        while s < side as usize {
            let n = 2 * s;
            let mut next = vec![0u32; n * n];
            for y in 0..s {
                for x in 0..s {
                    let v = 4 * m[y * s + x];
                    next[y * n + x] = v;
                    next[y * n + x + s] = v + 2;
                    next[(y + s) * n + x] = v + 3;
                    next[(y + s) * n + x + s] = v + 1;
                }
            }
            m = next;
            s = n;
        }
        Self::new(side, m)
    }

    pub fn side(&self) -> u32 {
        self.side
    }

    pub fn values(&self) -> &[u32] {
        &self.values
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DitherPolicy {
    pub spatial: ThresholdMatrix,
    /// Rotate thresholds from plane to plane so "on" mirrors move around.
    pub temporal_rotation: bool,
}

impl DitherPolicy {
    pub fn bayer(k: u32) -> Result<Self> {
        Ok(Self {
            spatial: ThresholdMatrix::bayer(k)?,
            temporal_rotation: true,
        })
    }
}

/// One plane of one block: bit `row * k + col` set when that mirror is on.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct BlockMask(pub u64);

impl BlockMask {
    pub fn count(self) -> u32 {
        self.0.count_ones()
    }

    pub fn is_on(self, row: u32, col: u32, k: u32) -> bool {
        self.0 >> (row * k + col) & 1 == 1
    }
}

/// On-slot count for level `u`: `round(u * M * k^2)`, ties away from zero.
pub fn quantize_duty(u: f64, planes: u32, k: u32) -> u32 {
    debug_assert!((0.0..=1.0).contains(&u), "u = {u}");
    let slots = planes as f64 * (k * k) as f64;
    (u.clamp(0.0, 1.0) * slots).round() as u32
}

/// Number of on-slots the Bresenham split assigns to plane `m`.
#[inline]
fn plane_share(c: u64, planes: u64, m: u64) -> u64 {
    (m + 1) * c / planes - m * c / planes
}

/// Threshold rotation applied on plane `m`.
#[inline]
fn plane_rotation(m: u32, planes: u32, k2: u32, enabled: bool) -> u32 {
    if !enabled {
        return 0;
    }
    let step = k2 / gcd(planes, k2);
    ((m as u64 * step as u64) % k2 as u64) as u32
}

/// Spread `c` on-slots over `planes` planes of a `k x k` block.
pub fn schedule_block(c: u32, planes: u32, k: u32, policy: &DitherPolicy) -> Result<Vec<BlockMask>> {
    if policy.spatial.side() != k {
        return Err(Error::invalid(
            "dither.matrix",
            format!("side {} does not match block side {k}", policy.spatial.side()),
        ));
    }
    if k == 0 || k > 8 {
        return Err(Error::invalid("k", "block side must be in 1..=8"));
    }
    if planes == 0 {
        return Err(Error::invalid("planes", "must be >= 1"));
    }
    let k2 = k * k;
    if c as u64 > planes as u64 * k2 as u64 {
        return Err(Error::invalid(
            "c",
            format!("{c} exceeds {} slots", planes as u64 * k2 as u64),
        ));
    }
    let thresholds = policy.spatial.values();
    Ok((0..planes)
        .map(|m| {
            let on = plane_share(c as u64, planes as u64, m as u64) as u32;
            let rot = plane_rotation(m, planes, k2, policy.temporal_rotation);
            let mut bits = 0u64;
            for (i, &t) in thresholds.iter().enumerate() {
                if (t + rot) % k2 < on {
                    bits |= 1 << i;
                }
            }
            BlockMask(bits)
        })
        .collect())
}

/// Precomputed `schedule_block` output for every `c`.
#[derive(Clone, Debug)]
struct ScheduleTable {
    planes: usize,
    masks: Vec<BlockMask>,
}

impl ScheduleTable {
    fn new(planes: u32, k: u32, policy: &DitherPolicy) -> Result<Self> {
        let slots = planes * k * k;
        let mut masks = Vec::with_capacity((slots as usize + 1) * planes as usize);
        for c in 0..=slots {
            masks.extend(schedule_block(c, planes, k, policy)?);
        }
        Ok(Self {
            planes: planes as usize,
            masks,
        })
    }

    #[inline]
    fn mask(&self, c: u32, m: usize) -> BlockMask {
        self.masks[c as usize * self.planes + m]
    }
}

/// Frame-at-a-time encoder; reuse it to stream long sequences.
#[derive(Clone, Debug)]
pub struct Encoder {
    mapping: BlockMapping,
    timing: TimingConfig,
    table: ScheduleTable,
}

impl Encoder {
    pub fn new(mapping: &BlockMapping, timing: &TimingConfig, policy: &DitherPolicy) -> Result<Self> {
        mapping.validate()?;
        timing.validate()?;
        let table = ScheduleTable::new(timing.planes_per_aop_frame(), mapping.k_cop, policy)?;
        Ok(Self {
            mapping: mapping.clone(),
            timing: timing.clone(),
            table,
        })
    }

    pub fn planes_per_frame(&self) -> usize {
        self.table.planes
    }

    pub fn plane_bytes(&self) -> usize {
        row_stride(self.mapping.dmd_width) * self.mapping.dmd_height as usize
    }

    pub fn mapping(&self) -> &BlockMapping {
        &self.mapping
    }

    pub fn timing(&self) -> &TimingConfig {
        &self.timing
    }

    /// Encode one frame into `M` planes stored back to back.
    pub fn encode_frame(&self, frame: &TargetFrame) -> Result<Vec<u8>> {
        let grid = self.mapping.grid;
        if frame.grid() != grid {
            return Err(Error::Geometry(format!(
                "frame is {}x{}, mapping expects {}x{}",
                frame.width, frame.height, grid.width, grid.height
            )));
        }
        if frame.duration_ns != self.timing.aop_frame_period_ns {
            return Err(Error::Timing(format!(
                "frame duration {} ns differs from the AOP frame period {} ns",
                frame.duration_ns, self.timing.aop_frame_period_ns
            )));
        }
        frame.validate()?;
        let planes = self.table.planes;
        let k = self.mapping.k_cop;
        let counts: Vec<u32> = frame
            .radiance
            .iter()
            .map(|&u| quantize_duty(u, planes as u32, k))
            .collect();
        let stride = row_stride(self.mapping.dmd_width);
        let plane_bytes = self.plane_bytes();
        let mut out = vec![0u8; planes * plane_bytes];
        out.par_chunks_mut(plane_bytes)
            .enumerate()
            .for_each(|(m, plane)| {
                for y in 0..grid.height {
                    for x in 0..grid.width {
                        let mask = self.table.mask(counts[y * grid.width + x], m);
                        if mask.0 == 0 {
                            continue;
                        }
                        let (mx, my) = self.mapping.block_origin(x, y);
                        for row in 0..k {
                            for col in 0..k {
                                if mask.is_on(row, col, k) {
                                    set_bit(plane, stride, mx + col as usize, my + row as usize);
                                }
                            }
                        }
                    }
                }
            });
        Ok(out)
    }

    pub fn encode_sequence(&self, frames: &[TargetFrame]) -> Result<PlaneStream> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("frames", "empty sequence"))?;
        check_contiguous(frames)?;
        let mut stream = PlaneStream::new(
            self.mapping.dmd_width,
            self.mapping.dmd_height,
            self.timing.plane_period_ns,
            first.t_start_ns + self.timing.trigger_offset_ns,
        );
        for f in frames {
            stream.extend_planes(&self.encode_frame(f)?)?;
        }
        Ok(stream)
    }
}

pub fn encode_sequence(
    frames: &[TargetFrame],
    mapping: &BlockMapping,
    timing: &TimingConfig,
    policy: &DitherPolicy,
) -> Result<PlaneStream> {
    Encoder::new(mapping, timing, policy)?.encode_sequence(frames)
}

/// Achieved duty per COP pixel per frame.
#[derive(Clone, Debug, PartialEq)]
pub struct DutyMap {
    pub grid: Grid,
    /// `frames[n][y * width + x]`
    pub frames: Vec<Vec<f64>>,
}

/// Recover the duty each block actually received, frame by frame.
pub fn decode_reference(
    stream: &PlaneStream,
    mapping: &BlockMapping,
    timing: &TimingConfig,
) -> Result<DutyMap> {
    mapping.validate()?;
    timing.validate()?;
    if stream.width != mapping.dmd_width || stream.height != mapping.dmd_height {
        return Err(Error::Geometry(format!(
            "stream is {}x{} mirrors, mapping expects {}x{}",
            stream.width, stream.height, mapping.dmd_width, mapping.dmd_height
        )));
    }
    if stream.plane_period_ns != timing.plane_period_ns {
        return Err(Error::Geometry(format!(
            "stream plane period {} ns, timing says {} ns",
            stream.plane_period_ns, timing.plane_period_ns
        )));
    }
    let planes = timing.planes_per_aop_frame() as usize;
    if stream.plane_count() % planes != 0 {
        return Err(Error::Geometry(format!(
            "{} planes is not a whole number of {planes}-plane frames",
            stream.plane_count()
        )));
    }
    let grid = mapping.grid;
    let k = mapping.k_cop as usize;
    let slots = (planes * k * k) as f64;
    let stride = stream.stride();
    let frames = (0..stream.plane_count() / planes)
        .into_par_iter()
        .map(|n| {
            let mut on = vec![0u32; grid.len()];
            for m in 0..planes {
                let plane = stream.plane(n * planes + m);
                for y in 0..grid.height {
                    for x in 0..grid.width {
                        let (mx, my) = mapping.block_origin(x, y);
                        let mut c = 0;
                        for r in 0..k {
                            for q in 0..k {
                                c += get_bit(plane, stride, mx + q, my + r) as u32;
                            }
                        }
                        on[y * grid.width + x] += c;
                    }
                }
            }
            on.into_iter().map(|c| c as f64 / slots).collect()
        })
        .collect();
    Ok(DutyMap { grid, frames })
}
