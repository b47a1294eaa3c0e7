//! Dual-pathway (COP/AOP) sensor model.
//!
//! The AOP pathway runs at the AOP frame rate on 2x2-binned panchromatic
//! pixels and reports signed 7-bit temporal (TD) and spatial (SD)
//! differences of its internal intensity. The COP pathway integrates
//! `cop_ratio` AOP periods per frame on the full-resolution RGGB mosaic
//! and digitizes through the ADC.
//!
//! Per pixel, the internal intensity in electrons is
//!
//! ```text
//! I = clamp(Poisson(qe * (1 + prnu) * photons + dark), 0, full_well) + dsnu + N(0, read_noise)
//! ```
//!
//! with all draws keyed by `(seed, pathway, frame, x, y)`.

mod stream;

use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::encoder::TimingConfig;
use crate::error::{Error, Result};
use crate::projector::PhotonField;
use crate::rng;
use crate::stimulus::Grid;

pub use stream::{PathwayStreams, TMOC_MAGIC, TMOC_VERSION};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TianmoucConfig {
    /// Electrons per photon.
    pub qe: f64,
    pub full_well: f64,
    /// Electrons RMS.
    pub read_noise: f64,
    /// Electrons per pixel per AOP frame period.
    pub dark_current: f64,
    /// Spatial std of the dark offset, electrons. Ignored when `dsnu_map` is set.
    pub dsnu_sigma: f64,
    /// Explicit COP dark offsets (electrons), row-major.
    pub dsnu_map: Option<Vec<f64>>,
    /// Spatial std of the relative gain deviation. Ignored when `prnu_map` is set.
    pub prnu_sigma: f64,
    /// Explicit COP gain deviations (fractions), row-major.
    pub prnu_map: Option<Vec<f64>>,
    /// Poisson sampling of collected charge; off gives the noise-free mean.
    pub shot_noise: bool,
    pub adc_bits: u32,
    /// DN per electron.
    pub adc_gain: f64,
    /// Offset added before the ADC clamps at zero.
    pub black_level_dn: f64,
    /// Quadratic ADC term: `s + alpha * s^2` for signal `s` in DN.
    pub adc_nonlinearity: f64,
    /// TD gain, DN per electron of difference.
    pub g_td: f64,
    /// SD gain, DN per electron of difference.
    pub g_sd: f64,
    /// Neighbour offsets `(dx, dy)` for SD planes, in AOP pixels.
    pub sd_kernels: Vec<[i32; 2]>,
    /// Relative response of R, G and B mosaic sites.
    pub bayer_gains: [f64; 3],
    #[serde(skip)]
    pub timing: TimingConfig,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for TianmoucConfig {
    fn default() -> Self {
        Self {
            qe: 0.6,
            full_well: 10_000.0,
            read_noise: 2.0,
            dark_current: 0.0,
            dsnu_sigma: 0.0,
            dsnu_map: None,
            prnu_sigma: 0.0,
            prnu_map: None,
            shot_noise: true,
            adc_bits: 10,
            adc_gain: 0.1,
            black_level_dn: 16.0,
            adc_nonlinearity: 0.0,
            g_td: 0.05,
            g_sd: 0.05,
            sd_kernels: vec![[1, 0], [0, 1]],
            bayer_gains: [1.0, 1.0, 1.0],
            timing: TimingConfig::default(),
            seed: 0,
        }
    }
}

impl TianmoucConfig {
    /// Deterministic, noise-free variant of `self`.
    pub fn noiseless(mut self) -> Self {
        self.read_noise = 0.0;
        self.dsnu_sigma = 0.0;
        self.dsnu_map = None;
        self.prnu_sigma = 0.0;
        self.prnu_map = None;
        self.shot_noise = false;
        self
    }

    pub fn max_code(&self) -> u16 {
        ((1u32 << self.adc_bits) - 1) as u16
    }

    /// Noise-free ADC transfer of `electrons` (before rounding and clamping).
    pub fn adc_analog(&self, electrons: f64) -> f64 {
        let s = self.adc_gain * electrons;
        s + self.adc_nonlinearity * s * s + self.black_level_dn
    }

    pub fn adc(&self, electrons: f64) -> u16 {
        self.adc_analog(electrons)
            .round()
            .clamp(0.0, self.max_code() as f64) as u16
    }

    /// Dark-subtracted COP output at full well, capped by the ADC range.
    pub fn saturation_dn(&self) -> f64 {
        (self.adc_analog(self.full_well).min(self.max_code() as f64) - self.black_level_dn).max(0.0)
    }

    pub fn validate(&self, grid: Grid) -> Result<()> {
        if !(self.qe > 0.0 && self.qe <= 1.0) {
            return Err(Error::invalid("tianmouc.qe", "must be in (0, 1]"));
        }
        if !(self.full_well.is_finite() && self.full_well > 0.0) {
            return Err(Error::invalid("tianmouc.full_well", "must be > 0"));
        }
        if !(8..=14).contains(&self.adc_bits) {
            return Err(Error::invalid("tianmouc.adc_bits", "must be in [8, 14]"));
        }
        if !(self.adc_gain.is_finite() && self.adc_gain > 0.0) {
            return Err(Error::invalid("tianmouc.adc_gain", "must be > 0"));
        }
        for (name, v) in [
            ("tianmouc.read_noise", self.read_noise),
            ("tianmouc.dark_current", self.dark_current),
            ("tianmouc.dsnu_sigma", self.dsnu_sigma),
            ("tianmouc.prnu_sigma", self.prnu_sigma),
            ("tianmouc.black_level_dn", self.black_level_dn),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::invalid(name, "must be >= 0"));
            }
        }
        if !self.adc_nonlinearity.is_finite() || !self.g_td.is_finite() || !self.g_sd.is_finite() {
            return Err(Error::invalid("tianmouc", "gains must be finite"));
        }
        if self.bayer_gains.iter().any(|g| !(g.is_finite() && *g >= 0.0)) {
            return Err(Error::invalid("tianmouc.bayer_gains", "must be >= 0"));
        }
        for (name, map) in [("tianmouc.dsnu_map", &self.dsnu_map), ("tianmouc.prnu_map", &self.prnu_map)] {
            if let Some(m) = map {
                if m.len() != grid.len() {
                    return Err(Error::invalid(
                        name,
                        format!("has {} entries for {} pixels", m.len(), grid.len()),
                    ));
                }
            }
        }
        if grid.width % 2 != 0 || grid.height % 2 != 0 || grid.is_empty() {
            return Err(Error::invalid(
                "grid",
                "COP grid must have even, nonzero width and height (AOP pixels bin 2x2)",
            ));
        }
        self.timing.validate()
    }
}

/// Round half away from zero, then clamp to the signed 7-bit range.
pub fn quantize_signed7(v: f64) -> i8 {
    if v.is_nan() {
        return 0;
    }
    v.round().clamp(-127.0, 127.0) as i8
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BayerSite {
    R,
    G,
    B,
}

impl BayerSite {
    /// RGGB mosaic.
    pub fn at(x: usize, y: usize) -> Self {
        match (x % 2, y % 2) {
            (0, 0) => BayerSite::R,
            (1, 1) => BayerSite::B,
            _ => BayerSite::G,
        }
    }

    pub fn index(self) -> usize {
        match self {
            BayerSite::R => 0,
            BayerSite::G => 1,
            BayerSite::B => 2,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct CopFrame {
    pub index: u64,
    pub timestamp_ns: u64,
    pub width: usize,
    pub height: usize,
    /// RGGB mosaic in DN.
    pub mosaic: Vec<u16>,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AopFrame {
    pub index: u64,
    pub timestamp_ns: u64,
    pub width: usize,
    pub height: usize,
    pub td: Vec<i8>,
    /// One plane per SD kernel.
    pub sd: Vec<Vec<i8>>,
}

#[derive(Clone, Debug)]
struct PixelMaps {
    dsnu_cop: Vec<f64>,
    prnu_cop: Vec<f64>,
    dsnu_aop: Vec<f64>,
    prnu_aop: Vec<f64>,
}

fn gaussian_map(seed: u64, label: &str, n: usize, sigma: f64) -> Vec<f64> {
    if sigma == 0.0 {
        return vec![0.0; n];
    }
    (0..n)
        .map(|i| {
            let z: f64 = StandardNormal.sample(&mut rng::rng_for(seed, label, &[i as u64]));
            sigma * z
        })
        .collect()
}

/// Stateful simulator; feed it one AOP exposure at a time.
#[derive(Clone, Debug)]
pub struct Tianmouc {
    cfg: TianmoucConfig,
    grid: Grid,
    aop_grid: Grid,
    maps: PixelMaps,
    t0_ns: u64,
    prev: Option<Vec<f64>>,
    aop_index: u64,
    cop_index: u64,
    cop_acc: Vec<f64>,
    cop_fill: u32,
}

impl Tianmouc {
    pub fn new(cfg: &TianmoucConfig, grid: Grid, t0_ns: u64) -> Result<Self> {
        cfg.validate(grid)?;
        let aop_grid = Grid::new(grid.width / 2, grid.height / 2);
        let seed = cfg.seed;
        let maps = PixelMaps {
            dsnu_cop: cfg
                .dsnu_map
                .clone()
                .unwrap_or_else(|| gaussian_map(seed, "dsnu.cop", grid.len(), cfg.dsnu_sigma)),
            prnu_cop: cfg
                .prnu_map
                .clone()
                .unwrap_or_else(|| gaussian_map(seed, "prnu.cop", grid.len(), cfg.prnu_sigma)),
            dsnu_aop: gaussian_map(seed, "dsnu.aop", aop_grid.len(), cfg.dsnu_sigma),
            prnu_aop: gaussian_map(seed, "prnu.aop", aop_grid.len(), cfg.prnu_sigma),
        };
        Ok(Self {
            cfg: cfg.clone(),
            grid,
            aop_grid,
            maps,
            t0_ns,
            prev: None,
            aop_index: 0,
            cop_index: 0,
            cop_acc: vec![0.0; grid.len()],
            cop_fill: 0,
        })
    }

    pub fn config(&self) -> &TianmoucConfig {
        &self.cfg
    }

    pub fn aop_grid(&self) -> Grid {
        self.aop_grid
    }

    fn sample(&self, pathway: &str, frame: u64, x: usize, y: usize, photo_mean: f64, dark: f64, dsnu: f64) -> f64 {
        let cfg = &self.cfg;
        let mean = (photo_mean + dark).max(0.0);
        let needs_rng = (cfg.shot_noise && mean > 0.0) || cfg.read_noise > 0.0;
        let mut r = needs_rng.then(|| rng::rng_for(cfg.seed, pathway, &[frame, x as u64, y as u64]));
        let collected = match (&mut r, cfg.shot_noise && mean > 0.0) {
            (Some(r), true) => Poisson::new(mean).map(|p| p.sample(r)).unwrap_or(mean),
            _ => mean,
        };
        let read = match (&mut r, cfg.read_noise > 0.0) {
            (Some(r), true) => {
                let z: f64 = StandardNormal.sample(r);
                cfg.read_noise * z
            }
            _ => 0.0,
        };
        collected.clamp(0.0, cfg.full_well) + dsnu + read
    }

    /// Internal AOP intensity (electrons) for AOP frame `n`, given photons per
    /// COP pixel collected during that frame's exposure.
    pub fn aop_intensity(&self, photons: &[f64], n: u64) -> Vec<f64> {
        let (w, ag) = (self.grid.width, self.aop_grid);
        let qe = self.cfg.qe;
        let dark = self.cfg.dark_current;
        (0..ag.height)
            .into_par_iter()
            .flat_map_iter(|y| {
                (0..ag.width).map(move |x| {
                    let i = y * ag.width + x;
                    let (cx, cy) = (2 * x, 2 * y);
                    let p = photons[cy * w + cx]
                        + photons[cy * w + cx + 1]
                        + photons[(cy + 1) * w + cx]
                        + photons[(cy + 1) * w + cx + 1];
                    let mean = qe * (1.0 + self.maps.prnu_aop[i]) * p;
                    self.sample("aop", n, x, y, mean, dark, self.maps.dsnu_aop[i])
                })
            })
            .collect()
    }

    /// COP electrons for frame `j`, given photons per COP pixel integrated over
    /// the whole COP exposure.
    pub fn cop_electrons(&self, photons: &[f64], j: u64) -> Vec<f64> {
        let w = self.grid.width;
        let qe = self.cfg.qe;
        let dark = self.cfg.dark_current * self.cfg.timing.cop_ratio as f64;
        (0..self.grid.height)
            .into_par_iter()
            .flat_map_iter(|y| {
                (0..w).map(move |x| {
                    let i = y * w + x;
                    let gain = self.cfg.bayer_gains[BayerSite::at(x, y).index()];
                    let mean = qe * (1.0 + self.maps.prnu_cop[i]) * gain * photons[i];
                    self.sample("cop", j, x, y, mean, dark, self.maps.dsnu_cop[i])
                })
            })
            .collect()
    }

    pub fn cop_frame(&self, photons: &[f64], j: u64) -> CopFrame {
        let mosaic = self
            .cop_electrons(photons, j)
            .into_iter()
            .map(|e| self.cfg.adc(e))
            .collect();
        CopFrame {
            index: j,
            timestamp_ns: self.t0_ns + j * self.cfg.timing.cop_frame_period_ns(),
            width: self.grid.width,
            height: self.grid.height,
            mosaic,
        }
    }

    /// TD and SD planes from consecutive intensities.
    pub fn differences(&self, current: &[f64], previous: Option<&[f64]>) -> (Vec<i8>, Vec<Vec<i8>>) {
        let ag = self.aop_grid;
        let td = match previous {
            Some(prev) => current
                .iter()
                .zip(prev)
                .map(|(a, b)| quantize_signed7(self.cfg.g_td * (a - b)))
                .collect(),
            None => vec![0; ag.len()],
        };
        let sd = self
            .cfg
            .sd_kernels
            .iter()
            .map(|&[dx, dy]| {
                let mut plane = vec![0i8; ag.len()];
                for y in 0..ag.height {
                    for x in 0..ag.width {
                        let nx = x as i64 + dx as i64;
                        let ny = y as i64 + dy as i64;
                        if nx < 0 || ny < 0 || nx >= ag.width as i64 || ny >= ag.height as i64 {
                            continue;
                        }
                        let d = current[ny as usize * ag.width + nx as usize] - current[y * ag.width + x];
                        plane[y * ag.width + x] = quantize_signed7(self.cfg.g_sd * d);
                    }
                }
                plane
            })
            .collect();
        (td, sd)
    }

    /// Advance by one AOP frame. Returns the COP frame as well when this
    /// exposure completes one.
    pub fn push_exposure(&mut self, photons: &[f64]) -> Result<(AopFrame, Option<CopFrame>)> {
        if photons.len() != self.grid.len() {
            return Err(Error::Geometry(format!(
                "exposure has {} pixels, grid has {}",
                photons.len(),
                self.grid.len()
            )));
        }
        let n = self.aop_index;
        let intensity = self.aop_intensity(photons, n);
        let (td, sd) = self.differences(&intensity, self.prev.as_deref());
        let aop = AopFrame {
            index: n,
            timestamp_ns: self.t0_ns + n * self.cfg.timing.aop_frame_period_ns,
            width: self.aop_grid.width,
            height: self.aop_grid.height,
            td,
            sd,
        };
        self.prev = Some(intensity);
        self.aop_index += 1;

        for (a, p) in self.cop_acc.iter_mut().zip(photons) {
            *a += p;
        }
        self.cop_fill += 1;
        let cop = if self.cop_fill == self.cfg.timing.cop_ratio {
            let frame = self.cop_frame(&self.cop_acc, self.cop_index);
            self.cop_index += 1;
            self.cop_fill = 0;
            self.cop_acc.iter_mut().for_each(|a| *a = 0.0);
            Some(frame)
        } else {
            None
        };
        Ok((aop, cop))
    }
}

/// Simulate both pathways over a photon field covering whole COP frames.
pub fn simulate(field: &PhotonField, cfg: &TianmoucConfig) -> Result<PathwayStreams> {
    let grid = field.grid();
    let mut sim = Tianmouc::new(cfg, grid, field.t0_ns)?;
    let timing = &cfg.timing;
    if field.plane_period_ns != timing.plane_period_ns {
        return Err(Error::Geometry(format!(
            "field plane period {} ns, timing says {} ns",
            field.plane_period_ns, timing.plane_period_ns
        )));
    }
    let m = timing.planes_per_aop_frame() as usize;
    let per_cop = m * timing.cop_ratio as usize;
    if field.plane_count() == 0 || field.plane_count() % per_cop != 0 {
        return Err(Error::Timing(format!(
            "{} planes do not cover a whole number of COP frames ({per_cop} planes each)",
            field.plane_count()
        )));
    }
    let mut streams = PathwayStreams::empty(grid, cfg, field.t0_ns);
    for n in 0..field.plane_count() / m {
        let photons = field.integrate_planes(n * m..(n + 1) * m);
        let (aop, cop) = sim.push_exposure(&photons)?;
        streams.aop.push(aop);
        streams.cop.extend(cop);
    }
    Ok(streams)
}
