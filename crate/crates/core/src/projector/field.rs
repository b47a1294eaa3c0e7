//! `PhotonField` and its `PHOT` dump format.
//!
//! ```text
//! offset 0   magic  "PHOT"
//!        4   u32    width
//!        8   u32    height
//!        12  u32    plane count
//!        16  u64    plane_period_ns
//!        24  u64    t0_ns
//!        32  f32[width * height] per plane
//! ```

use crate::binio::{checked_len, put_u32, put_u64, ByteReader};
use crate::error::{Error, Result};
use crate::stimulus::Grid;

pub const PHOT_MAGIC: &[u8; 4] = b"PHOT";

/// Expected photons per sensor pixel per plane, plane-major.
#[derive(Clone, Debug, PartialEq)]
pub struct PhotonField {
    pub width: usize,
    pub height: usize,
    pub plane_period_ns: u64,
    pub t0_ns: u64,
    counts: Vec<f64>,
}

impl PhotonField {
    pub fn new(grid: Grid, plane_period_ns: u64, t0_ns: u64) -> Self {
        Self {
            width: grid.width,
            height: grid.height,
            plane_period_ns,
            t0_ns,
            counts: Vec::new(),
        }
    }

    pub fn from_planes(grid: Grid, plane_period_ns: u64, t0_ns: u64, counts: Vec<f64>) -> Result<Self> {
        let mut f = Self::new(grid, plane_period_ns, t0_ns);
        f.push_planes(&counts)?;
        Ok(f)
    }

    pub fn grid(&self) -> Grid {
        Grid::new(self.width, self.height)
    }

    pub fn pixels(&self) -> usize {
        self.width * self.height
    }

    pub fn plane_count(&self) -> usize {
        if self.pixels() == 0 {
            0
        } else {
            self.counts.len() / self.pixels()
        }
    }

    pub fn plane(&self, m: usize) -> &[f64] {
        let n = self.pixels();
        &self.counts[m * n..(m + 1) * n]
    }

    pub fn duration_ns(&self) -> u64 {
        (self.plane_count() as u64).saturating_mul(self.plane_period_ns)
    }

    /// Append plane-major values; every value must be finite and >= 0.
    pub fn push_planes(&mut self, values: &[f64]) -> Result<()> {
        let n = self.pixels();
        if n == 0 || values.len() % n != 0 {
            return Err(Error::Geometry("values are not a whole number of planes".into()));
        }
        if let Some(bad) = values.iter().find(|v| !(v.is_finite() && **v >= 0.0)) {
            return Err(Error::invalid("photon_field", format!("count {bad} is not >= 0")));
        }
        self.counts.extend_from_slice(values);
        Ok(())
    }

    /// Sum of counts over planes `range`.
    pub fn integrate_planes(&self, range: std::ops::Range<usize>) -> Vec<f64> {
        let mut acc = vec![0.0; self.pixels()];
        for m in range {
            for (a, v) in acc.iter_mut().zip(self.plane(m)) {
                *a += v;
            }
        }
        acc
    }

    /// Pixel `(x, y)` as a time series over planes.
    pub fn trace(&self, x: usize, y: usize) -> Vec<f64> {
        let i = y * self.width + x;
        (0..self.plane_count()).map(|m| self.plane(m)[i]).collect()
    }

    pub fn to_phot_bytes(&self) -> Vec<u8> {
        let mut out = Vec::with_capacity(32 + self.counts.len() * 4);
        out.extend_from_slice(PHOT_MAGIC);
        put_u32(&mut out, self.width as u32);
        put_u32(&mut out, self.height as u32);
        put_u32(&mut out, self.plane_count() as u32);
        put_u64(&mut out, self.plane_period_ns);
        put_u64(&mut out, self.t0_ns);
        for &v in &self.counts {
            out.extend_from_slice(&(v as f32).to_le_bytes());
        }
        out
    }

    pub fn from_phot_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(bytes, "PHOT");
        r.magic(PHOT_MAGIC)?;
        let width = r.u32()? as usize;
        let height = r.u32()? as usize;
        let planes = r.u32()? as u64;
        let plane_period_ns = r.u64()?;
        let t0_ns = r.u64()?;
        if width == 0 || height == 0 || plane_period_ns == 0 {
            return Err(Error::Format("PHOT: zero extent or period".into()));
        }
        let len = checked_len("PHOT", &[width as u64, height as u64, planes, 4])?;
        if len != r.remaining() {
            return Err(Error::Format(format!(
                "PHOT: header promises {len} payload bytes, found {}",
                r.remaining()
            )));
        }
        let counts: Vec<f64> = r
            .take(len)?
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]) as f64)
            .collect();
        r.finish()?;
        let mut f = Self::new(Grid::new(width, height), plane_period_ns, t0_ns);
        if !counts.is_empty() {
            f.push_planes(&counts).map_err(|e| Error::Format(format!("PHOT: {e}")))?;
        }
        Ok(f)
    }
}

/// Expected photons collected during `[t_a, t_b)`; both ends must sit on
/// plane boundaries inside the field.
pub fn integrate_exposure(field: &PhotonField, t_a: u64, t_b: u64) -> Result<Vec<f64>> {
    let p = field.plane_period_ns;
    if t_b < t_a {
        return Err(Error::Timing(format!("window [{t_a}, {t_b}) is reversed")));
    }
    if t_a < field.t0_ns || (t_a - field.t0_ns) % p != 0 || (t_b - field.t0_ns) % p != 0 {
        return Err(Error::Timing(format!(
            "window [{t_a}, {t_b}) is not aligned to {p} ns planes starting at {}",
            field.t0_ns
        )));
    }
    let first = ((t_a - field.t0_ns) / p) as usize;
    let last = ((t_b - field.t0_ns) / p) as usize;
    if last > field.plane_count() {
        return Err(Error::Timing(format!(
            "window ends at plane {last}, field has {}",
            field.plane_count()
        )));
    }
    Ok(field.integrate_planes(first..last))
}
