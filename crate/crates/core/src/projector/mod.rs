//! Optics model: binary mirror planes to expected photon counts.
//!
//! For COP pixel `(x, y)` and plane `m`:
//!
//! ```text
//! lambda(x, y, m) = dark_flux + phi_max * v(r(x, y)) * coverage(x, y, m)
//! ```
//!
//! `coverage` is the mean (blurred) mirror state over the `k x k` sample
//! points of the pixel's block, after the misalignment transform. With ideal
//! optics it reduces to `on_count / k^2`.

mod field;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::{get_bit, row_stride, BlockMapping, PlaneStream};
use crate::error::{Error, Result};

pub use field::{integrate_exposure, PhotonField, PHOT_MAGIC};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum Vignetting {
    Flat,
    /// `v(r) = 1 - (1 - edge_gain) * r^2`, `r = 1` at the sensor corners.
    Quadratic { edge_gain: f64 },
}

impl Default for Vignetting {
    fn default() -> Self {
        Vignetting::Flat
    }
}

impl Vignetting {
    pub fn gain(&self, r: f64) -> f64 {
        match self {
            Vignetting::Flat => 1.0,
            Vignetting::Quadratic { edge_gain } => 1.0 - (1.0 - edge_gain) * r * r,
        }
    }
}

/// Residual optical misalignment, in mirror units and radians.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Misalignment {
    pub dx: f64,
    pub dy: f64,
    pub rotation: f64,
}

impl Misalignment {
    pub fn is_zero(&self) -> bool {
        self.dx == 0.0 && self.dy == 0.0 && self.rotation == 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OpticalConfig {
    /// Photons per pixel per plane period at full duty.
    pub phi_max: f64,
    /// Gaussian blur radius in mirror units; 0 disables blur.
    pub psf_sigma: f64,
    pub vignetting: Vignetting,
    pub misalignment: Misalignment,
    /// Stray-light photons per pixel per plane.
    pub dark_flux: f64,
}

impl Default for OpticalConfig {
    fn default() -> Self {
        Self {
            phi_max: 12.0,
            psf_sigma: 0.0,
            vignetting: Vignetting::Flat,
            misalignment: Misalignment::default(),
            dark_flux: 0.0,
        }
    }
}

impl OpticalConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.phi_max.is_finite() && self.phi_max > 0.0) {
            return Err(Error::invalid("optics.phi_max", "must be > 0"));
        }
        if !(self.psf_sigma.is_finite() && self.psf_sigma >= 0.0) {
            return Err(Error::invalid("optics.psf_sigma", "must be >= 0"));
        }
        if !(self.dark_flux.is_finite() && self.dark_flux >= 0.0) {
            return Err(Error::invalid("optics.dark_flux", "must be >= 0"));
        }
        if let Vignetting::Quadratic { edge_gain } = self.vignetting {
            if !(edge_gain > 0.0 && edge_gain <= 1.0) {
                return Err(Error::invalid(
                    "optics.vignetting.edge_gain",
                    "must be in (0, 1]",
                ));
            }
        }
        let m = &self.misalignment;
        if !(m.dx.is_finite() && m.dy.is_finite() && m.rotation.is_finite()) {
            return Err(Error::invalid("optics.misalignment", "must be finite"));
        }
        Ok(())
    }

    pub fn is_ideal(&self) -> bool {
        self.psf_sigma == 0.0 && self.misalignment.is_zero()
    }
}

/// Discrete Gaussian truncated at 3 sigma, normalized to unit sum.
fn gaussian_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let k: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    k.into_iter().map(|v| v / sum).collect()
}

/// Rectangle of mirrors `[x0, x1) x [y0, y1)`.
#[derive(Clone, Copy, Debug)]
struct Window {
    x0: usize,
    y0: usize,
    x1: usize,
    y1: usize,
}

impl Window {
    fn width(&self) -> usize {
        self.x1 - self.x0
    }
}

/// Reusable projection kernel for one mapping and optical setup.
#[derive(Clone, Debug)]
pub struct Projector {
    mapping: BlockMapping,
    optics: OpticalConfig,
    gain: Vec<f64>,
    kernel: Vec<f64>,
    window: Window,
    /// Per pixel, `k^2` sample indices into `window` (None = off the DMD).
    samples: Vec<Option<u32>>,
}

impl Projector {
    pub fn new(mapping: &BlockMapping, optics: &OpticalConfig) -> Result<Self> {
        mapping.validate()?;
        optics.validate()?;
        let grid = mapping.grid;
        let half_w = grid.width as f64 / 2.0;
        let half_h = grid.height as f64 / 2.0;
        let corner = half_w.hypot(half_h);
        let mut gain = Vec::with_capacity(grid.len());
        for y in 0..grid.height {
            for x in 0..grid.width {
                let r = (x as f64 + 0.5 - half_w).hypot(y as f64 + 0.5 - half_h) / corner;
                gain.push(optics.vignetting.gain(r));
            }
        }

        let kernel = if optics.psf_sigma > 0.0 {
            gaussian_kernel(optics.psf_sigma)
        } else {
            vec![1.0]
        };
        let radius = kernel.len() / 2;

        let k = mapping.k_cop as usize;
        let (ox, oy) = mapping.origin();
        let cx = ox as f64 + (grid.width * k) as f64 / 2.0;
        let cy = oy as f64 + (grid.height * k) as f64 / 2.0;
        let (s, c) = optics.misalignment.rotation.sin_cos();
        let (dx, dy) = (optics.misalignment.dx, optics.misalignment.dy);
        let dmd_w = mapping.dmd_width as i64;
        let dmd_h = mapping.dmd_height as i64;

        let mut points = Vec::with_capacity(grid.len() * k * k);
        for y in 0..grid.height {
            for x in 0..grid.width {
                let (mx, my) = mapping.block_origin(x, y);
                for j in 0..k {
                    for i in 0..k {
                        let sx = (mx + i) as f64 + 0.5 - cx;
                        let sy = (my + j) as f64 + 0.5 - cy;
                        let px = (cx + c * sx - s * sy + dx).floor() as i64;
                        let py = (cy + s * sx + c * sy + dy).floor() as i64;
                        points.push((px >= 0 && py >= 0 && px < dmd_w && py < dmd_h).then_some((px as usize, py as usize)));
                    }
                }
            }
        }
        let (mut x0, mut y0, mut x1, mut y1) = (usize::MAX, usize::MAX, 0, 0);
        for &(px, py) in points.iter().flatten() {
            x0 = x0.min(px);
            y0 = y0.min(py);
            x1 = x1.max(px + 1);
            y1 = y1.max(py + 1);
        }
        if x0 == usize::MAX {
            (x0, y0, x1, y1) = (0, 0, 1, 1);
        }
        // blur pulls light from up to `radius` mirrors outside the sampled area
        let window = Window {
            x0: x0.saturating_sub(radius),
            y0: y0.saturating_sub(radius),
            x1: (x1 + radius).min(mapping.dmd_width as usize),
            y1: (y1 + radius).min(mapping.dmd_height as usize),
        };
        let samples = points
            .into_iter()
            .map(|p| p.map(|(px, py)| ((py - window.y0) * window.width() + (px - window.x0)) as u32))
            .collect();

        Ok(Self {
            mapping: mapping.clone(),
            optics: optics.clone(),
            gain,
            kernel,
            window,
            samples,
        })
    }

    pub fn mapping(&self) -> &BlockMapping {
        &self.mapping
    }

    pub fn optics(&self) -> &OpticalConfig {
        &self.optics
    }

    fn dmd_plane_bytes(&self) -> usize {
        row_stride(self.mapping.dmd_width) * self.mapping.dmd_height as usize
    }

    /// Mirror states inside the window, blurred when `psf_sigma > 0`.
    fn mirror_image(&self, plane: &[u8]) -> Vec<f64> {
        let w = self.window;
        let stride = row_stride(self.mapping.dmd_width);
        let (ww, wh) = (w.width(), w.y1 - w.y0);
        let mut img = Vec::with_capacity(ww * wh);
        for y in w.y0..w.y1 {
            for x in w.x0..w.x1 {
                img.push(get_bit(plane, stride, x, y) as u8 as f64);
            }
        }
        if self.kernel.len() == 1 {
            return img;
        }
        let r = (self.kernel.len() / 2) as i64;
        let mut tmp = vec![0.0; ww * wh];
        for y in 0..wh {
            for x in 0..ww {
                let mut acc = 0.0;
                for (t, kv) in self.kernel.iter().enumerate() {
                    let xs = x as i64 + t as i64 - r;
                    if xs >= 0 && (xs as usize) < ww {
                        acc += kv * img[y * ww + xs as usize];
                    }
                }
                tmp[y * ww + x] = acc;
            }
        }
        for y in 0..wh {
            for x in 0..ww {
                let mut acc = 0.0;
                for (t, kv) in self.kernel.iter().enumerate() {
                    let ys = y as i64 + t as i64 - r;
                    if ys >= 0 && (ys as usize) < wh {
                        acc += kv * tmp[ys as usize * ww + x];
                    }
                }
                img[y * ww + x] = acc;
            }
        }
        img
    }

    /// Expected photons per pixel for one plane.
    pub fn project_plane(&self, plane: &[u8]) -> Vec<f64> {
        let grid = self.mapping.grid;
        let k = self.mapping.k_cop as usize;
        let k2 = (k * k) as f64;
        let phi = self.optics.phi_max;
        let dark = self.optics.dark_flux;

        if self.optics.is_ideal() {
            let stride = row_stride(self.mapping.dmd_width);
            let mut out = Vec::with_capacity(grid.len());
            for y in 0..grid.height {
                for x in 0..grid.width {
                    let (mx, my) = self.mapping.block_origin(x, y);
                    let mut on = 0u32;
                    for r in 0..k {
                        for q in 0..k {
                            on += get_bit(plane, stride, mx + q, my + r) as u32;
                        }
                    }
                    let i = y * grid.width + x;
                    out.push(dark + phi * self.gain[i] * (on as f64 / k2));
                }
            }
            return out;
        }

        let img = self.mirror_image(plane);
        self.samples
            .chunks_exact(k * k)
            .zip(&self.gain)
            .map(|(pts, g)| {
                let cov: f64 = pts.iter().flatten().map(|&i| img[i as usize]).sum::<f64>() / k2;
                dark + phi * g * cov
            })
            .collect()
    }

    /// Project planes stored back to back; output is plane-major.
    pub fn project_planes(&self, planes: &[u8]) -> Result<Vec<f64>> {
        let n = self.dmd_plane_bytes();
        if n == 0 || planes.len() % n != 0 {
            return Err(Error::Geometry("plane block is not a whole number of planes".into()));
        }
        let per_plane: Vec<Vec<f64>> = planes
            .par_chunks(n)
            .map(|p| self.project_plane(p))
            .collect();
        Ok(per_plane.concat())
    }
}

/// Project a whole plane stream onto the sensor grid.
pub fn project(stream: &PlaneStream, mapping: &BlockMapping, optics: &OpticalConfig) -> Result<PhotonField> {
    if stream.width != mapping.dmd_width || stream.height != mapping.dmd_height {
        return Err(Error::Geometry(format!(
            "stream is {}x{} mirrors, mapping expects {}x{}",
            stream.width, stream.height, mapping.dmd_width, mapping.dmd_height
        )));
    }
    let projector = Projector::new(mapping, optics)?;
    let mut field = PhotonField::new(mapping.grid, stream.plane_period_ns, stream.t0_ns);
    for chunk in (0..stream.plane_count()).collect::<Vec<_>>().chunks(64) {
        let planes: Vec<u8> = chunk.iter().flat_map(|&i| stream.plane(i).iter().copied()).collect();
        field.push_planes(&projector.project_planes(&planes)?)?;
    }
    Ok(field)
}
