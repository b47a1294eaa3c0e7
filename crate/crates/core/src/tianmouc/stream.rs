//! `TMOC` stream dump.
//!
//! ```text
//! "TMOC"  u32 version=1
//! u32 cop_width   u32 cop_height   u32 cop_ratio
//! u32 cop_count   u32 aop_count    u32 kernel_count
//! u64 t0_ns       u64 aop_frame_period_ns
//! kernel_count x (i32 dx, i32 dy)
//! cop_count x u16[cop_width * cop_height]             RGGB mosaic, DN
//! aop_count x (i8 TD[aop_w * aop_h], kernel_count x i8 SD[aop_w * aop_h])
//! ```
//!
//! Little-endian; AOP planes are `cop_width / 2` by `cop_height / 2`. Frame
//! indices are implicit and timestamps follow from `t0_ns` and the period.

use super::{AopFrame, CopFrame, TianmoucConfig};
use crate::binio::{checked_len, put_i32, put_u16, put_u32, put_u64, ByteReader};
use crate::error::{Error, Result};
use crate::stimulus::Grid;

pub const TMOC_MAGIC: &[u8; 4] = b"TMOC";
pub const TMOC_VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PathwayStreams {
    pub cop_width: usize,
    pub cop_height: usize,
    pub cop_ratio: u32,
    pub kernels: Vec<[i32; 2]>,
    pub t0_ns: u64,
    pub aop_frame_period_ns: u64,
    pub cop: Vec<CopFrame>,
    pub aop: Vec<AopFrame>,
}

impl PathwayStreams {
    pub fn empty(grid: Grid, cfg: &TianmoucConfig, t0_ns: u64) -> Self {
        Self {
            cop_width: grid.width,
            cop_height: grid.height,
            cop_ratio: cfg.timing.cop_ratio,
            kernels: cfg.sd_kernels.clone(),
            t0_ns,
            aop_frame_period_ns: cfg.timing.aop_frame_period_ns,
            cop: Vec::new(),
            aop: Vec::new(),
        }
    }

    /// `aop.len() == cop.len() * cop_ratio`.
    pub fn ratio_holds(&self) -> bool {
        self.aop.len() == self.cop.len() * self.cop_ratio as usize
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(TMOC_MAGIC);
        put_u32(&mut out, TMOC_VERSION);
        put_u32(&mut out, self.cop_width as u32);
        put_u32(&mut out, self.cop_height as u32);
        put_u32(&mut out, self.cop_ratio);
        put_u32(&mut out, self.cop.len() as u32);
        put_u32(&mut out, self.aop.len() as u32);
        put_u32(&mut out, self.kernels.len() as u32);
        put_u64(&mut out, self.t0_ns);
        put_u64(&mut out, self.aop_frame_period_ns);
        for &[dx, dy] in &self.kernels {
            put_i32(&mut out, dx);
            put_i32(&mut out, dy);
        }
        for f in &self.cop {
            for &v in &f.mosaic {
                put_u16(&mut out, v);
            }
        }
        for f in &self.aop {
            out.extend(f.td.iter().map(|&v| v as u8));
            for plane in &f.sd {
                out.extend(plane.iter().map(|&v| v as u8));
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "TMOC");
        r.magic(TMOC_MAGIC)?;
        let version = r.u32()?;
        if version != TMOC_VERSION {
            return Err(Error::Format(format!("TMOC: unsupported version {version}")));
        }
        let w = r.u32()? as usize;
        let h = r.u32()? as usize;
        let ratio = r.u32()?;
        let cop_count = r.u32()? as usize;
        let aop_count = r.u32()? as usize;
        let kernel_count = r.u32()? as usize;
        let t0_ns = r.u64()?;
        let period = r.u64()?;
        if w == 0 || h == 0 || w % 2 != 0 || h % 2 != 0 {
            return Err(Error::Format(format!("TMOC: bad COP grid {w}x{h}")));
        }
        if ratio == 0 {
            return Err(Error::Format("TMOC: zero ratio".into()));
        }
        let aop_px = (w / 2) * (h / 2);
        let need = checked_len("TMOC", &[kernel_count as u64, 8])?
            .checked_add(checked_len("TMOC", &[cop_count as u64, (w * h) as u64, 2])?)
            .and_then(|n| {
                checked_len("TMOC", &[aop_count as u64, aop_px as u64, kernel_count as u64 + 1])
                    .ok()
                    .and_then(|m| n.checked_add(m))
            })
            .ok_or_else(|| Error::Format("TMOC: size overflow".into()))?;
        if need != r.remaining() {
            return Err(Error::Format(format!(
                "TMOC: header promises {need} payload bytes, found {}",
                r.remaining()
            )));
        }
        let mut kernels = Vec::with_capacity(kernel_count);
        for _ in 0..kernel_count {
            kernels.push([r.i32()?, r.i32()?]);
        }
        let cop_period = period
            .checked_mul(ratio as u64)
            .ok_or_else(|| Error::Format("TMOC: COP period overflows".into()))?;
        let mut cop = Vec::with_capacity(cop_count);
        for j in 0..cop_count {
            let data = r.take(w * h * 2)?;
            cop.push(CopFrame {
                index: j as u64,
                timestamp_ns: t0_ns.wrapping_add((j as u64).wrapping_mul(cop_period)),
                width: w,
                height: h,
                mosaic: data.chunks_exact(2).map(|b| u16::from_le_bytes([b[0], b[1]])).collect(),
            });
        }
        let mut aop = Vec::with_capacity(aop_count);
        for n in 0..aop_count {
            let td = r.take(aop_px)?.iter().map(|&b| b as i8).collect();
            let mut sd = Vec::with_capacity(kernel_count);
            for _ in 0..kernel_count {
                sd.push(r.take(aop_px)?.iter().map(|&b| b as i8).collect());
            }
            aop.push(AopFrame {
                index: n as u64,
                timestamp_ns: t0_ns.wrapping_add((n as u64).wrapping_mul(period)),
                width: w / 2,
                height: h / 2,
                td,
                sd,
            });
        }
        r.finish()?;
        Ok(Self {
            cop_width: w,
            cop_height: h,
            cop_ratio: ratio,
            kernels,
            t0_ns,
            aop_frame_period_ns: period,
            cop,
            aop,
        })
    }
}
