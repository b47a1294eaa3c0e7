//! The assembled optical bench: encoder, projector and both sensor models
//! wired together, frame by frame.

use crate::config::BenchConfig;
use crate::encoder::{BlockMapping, DitherPolicy, Encoder, TimingConfig};
use crate::error::{Error, Result};
use crate::evs::{DropStats, EventStream, EvsConfig, EvsSim};
use crate::projector::{OpticalConfig, PhotonField, Projector};
use crate::stimulus::{Grid, TargetFrame};
use crate::tianmouc::{PathwayStreams, Tianmouc, TianmoucConfig};

/// Recently projected frames, keyed by radiance.
struct PlaneCache {
    entries: Vec<(Vec<f64>, Vec<f64>)>,
}

impl PlaneCache {
    const SIZE: usize = 4;

    fn new() -> Self {
        Self { entries: Vec::new() }
    }

    fn get_or_project(&mut self, bench: &Bench, frame: &TargetFrame) -> Result<&[f64]> {
        if let Some(i) = self.entries.iter().position(|(r, _)| *r == frame.radiance) {
            let hit = self.entries.remove(i);
            self.entries.push(hit);
        } else {
            let planes = bench.frame_planes(frame)?;
            if self.entries.len() == Self::SIZE {
                self.entries.remove(0);
            }
            self.entries.push((frame.radiance.clone(), planes));
        }
        Ok(&self.entries.last().expect("just pushed").1)
    }
}

#[derive(Clone, Debug)]
pub struct Bench {
    pub tianmouc: TianmoucConfig,
    pub evs: EvsConfig,
    encoder: Encoder,
    projector: Projector,
}

impl Bench {
    pub fn new(
        mapping: &BlockMapping,
        timing: &TimingConfig,
        optics: &OpticalConfig,
        tianmouc: &TianmoucConfig,
        evs: &EvsConfig,
    ) -> Result<Self> {
        let policy = DitherPolicy::bayer(mapping.k_cop)?;
        let tianmouc = TianmoucConfig {
            timing: timing.clone(),
            ..tianmouc.clone()
        };
        tianmouc.validate(mapping.grid)?;
        evs.validate()?;
        Ok(Self {
            tianmouc,
            evs: evs.clone(),
            encoder: Encoder::new(mapping, timing, &policy)?,
            projector: Projector::new(mapping, optics)?,
        })
    }

    pub fn from_config(cfg: &BenchConfig) -> Result<Self> {
        Self::new(
            &cfg.block_mapping()?,
            &cfg.timing,
            &cfg.optics,
            &cfg.tianmouc_config(),
            &cfg.evs_config(),
        )
    }

    /// The configured bench reduced to a `grid` patch on a tight DMD window.
    pub fn patch(cfg: &BenchConfig, grid: Grid) -> Result<Self> {
        let k = cfg.mapping.k_cop;
        let o = &cfg.optics;
        let reach = 3.0 * o.psf_sigma
            + o.misalignment.dx.abs()
            + o.misalignment.dy.abs()
            + o.misalignment.rotation.abs() * ((grid.width + grid.height) as f64) * k as f64;
        let mapping = BlockMapping::tight(grid, k, k + reach.ceil() as u32)?;
        Self::new(&mapping, &cfg.timing, o, &cfg.tianmouc_config(), &cfg.evs_config())
    }

    pub fn grid(&self) -> Grid {
        self.mapping().grid
    }

    pub fn mapping(&self) -> &BlockMapping {
        self.encoder.mapping()
    }

    pub fn timing(&self) -> &TimingConfig {
        self.encoder.timing()
    }

    pub fn optics(&self) -> &OpticalConfig {
        self.projector.optics()
    }

    pub fn planes_per_frame(&self) -> usize {
        self.encoder.planes_per_frame()
    }

    /// Same bench with a different source power.
    pub fn with_phi_max(&self, phi_max: f64) -> Result<Self> {
        let optics = OpticalConfig {
            phi_max,
            ..self.optics().clone()
        };
        Self::new(self.mapping(), self.timing(), &optics, &self.tianmouc, &self.evs)
    }

    pub fn with_sensors(&self, tianmouc: &TianmoucConfig, evs: &EvsConfig) -> Result<Self> {
        Self::new(self.mapping(), self.timing(), self.optics(), tianmouc, evs)
    }

    /// Target frame `n` of a sequence starting at zero.
    pub fn frame(&self, radiance: Vec<f64>, n: usize) -> Result<TargetFrame> {
        let g = self.grid();
        let p = self.timing().aop_frame_period_ns;
        TargetFrame::new(g.width, g.height, radiance, n as u64 * p, p)
    }

    pub fn uniform_frame(&self, u: f64, n: usize) -> Result<TargetFrame> {
        self.frame(vec![u; self.grid().len()], n)
    }

    /// Project encoded planes stored back to back; plane-major photons.
    pub fn project_bits(&self, bits: &[u8]) -> Result<Vec<f64>> {
        self.projector.project_planes(bits)
    }

    /// Photons per pixel for each of the frame's planes, plane-major.
    pub fn frame_planes(&self, frame: &TargetFrame) -> Result<Vec<f64>> {
        let bits = self.encoder.encode_frame(frame)?;
        self.projector.project_planes(&bits)
    }

    /// Photons per pixel collected over one AOP frame.
    pub fn exposure(&self, frame: &TargetFrame) -> Result<Vec<f64>> {
        let n = self.grid().len();
        let planes = self.frame_planes(frame)?;
        let mut acc = vec![0.0; n];
        for plane in planes.chunks_exact(n) {
            for (a, v) in acc.iter_mut().zip(plane) {
                *a += v;
            }
        }
        Ok(acc)
    }

    fn t0(&self, frames: &[TargetFrame]) -> Result<u64> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("frames", "empty sequence"))?;
        crate::stimulus::check_contiguous(frames)?;
        Ok(first.t_start_ns + self.timing().trigger_offset_ns)
    }

    pub fn photon_field(&self, frames: &[TargetFrame]) -> Result<PhotonField> {
        let mut field = PhotonField::new(self.grid(), self.timing().plane_period_ns, self.t0(frames)?);
        let mut cache = PlaneCache::new();
        for f in frames {
            field.push_planes(cache.get_or_project(self, f)?)?;
        }
        Ok(field)
    }

    /// Dual-pathway response to `frames`, one frame per AOP period.
    pub fn run_tianmouc(&self, frames: &[TargetFrame]) -> Result<PathwayStreams> {
        let ratio = self.timing().cop_ratio as usize;
        if frames.is_empty() || frames.len() % ratio != 0 {
            return Err(Error::Timing(format!(
                "{} frames do not fill a whole number of COP frames ({ratio} AOP frames each)",
                frames.len()
            )));
        }
        let t0 = self.t0(frames)?;
        let mut sim = Tianmouc::new(&self.tianmouc, self.grid(), t0)?;
        let mut out = PathwayStreams::empty(self.grid(), &self.tianmouc, t0);
        let mut last: Option<(&[f64], Vec<f64>)> = None;
        for f in frames {
            let exposure = match &last {
                Some((r, e)) if *r == f.radiance.as_slice() => e.clone(),
                _ => self.exposure(f)?,
            };
            let (aop, cop) = sim.push_exposure(&exposure)?;
            out.aop.push(aop);
            out.cop.extend(cop);
            last = Some((&f.radiance, exposure));
        }
        Ok(out)
    }

    /// Event-sensor response to `frames`.
    pub fn run_evs(&self, frames: &[TargetFrame]) -> Result<(EventStream, DropStats)> {
        let t0 = self.t0(frames)?;
        let mut sim = EvsSim::new(&self.evs, self.grid(), self.timing().plane_period_ns, t0)?;
        let mut cache = PlaneCache::new();
        for f in frames {
            sim.push_planes(cache.get_or_project(self, f)?)?;
        }
        Ok(sim.finish())
    }
}

/// Which sensor models a [`SensorRun`] drives.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Sensors {
    pub tianmouc: bool,
    pub evs: bool,
}

/// Both sensor models fed one AOP frame of photon planes at a time.
pub struct SensorRun {
    planes_per_frame: usize,
    pixels: usize,
    tianmouc: Option<(Tianmouc, PathwayStreams)>,
    evs: Option<EvsSim>,
}

impl SensorRun {
    pub fn new(bench: &Bench, t0_ns: u64, sensors: Sensors) -> Result<Self> {
        let grid = bench.grid();
        let tianmouc = if sensors.tianmouc {
            Some((
                Tianmouc::new(&bench.tianmouc, grid, t0_ns)?,
                PathwayStreams::empty(grid, &bench.tianmouc, t0_ns),
            ))
        } else {
            None
        };
        let evs = if sensors.evs {
            Some(EvsSim::new(&bench.evs, grid, bench.timing().plane_period_ns, t0_ns)?)
        } else {
            None
        };
        Ok(Self {
            planes_per_frame: bench.planes_per_frame(),
            pixels: grid.len(),
            tianmouc,
            evs,
        })
    }

    /// Photons per pixel for one AOP frame's planes, plane-major.
    pub fn push_frame(&mut self, planes: &[f64]) -> Result<()> {
        if planes.len() != self.planes_per_frame * self.pixels {
            return Err(Error::Geometry(format!(
                "expected {} planes of {} pixels",
                self.planes_per_frame, self.pixels
            )));
        }
        if let Some((sim, out)) = &mut self.tianmouc {
            let mut acc = vec![0.0; self.pixels];
            for plane in planes.chunks_exact(self.pixels) {
                for (a, v) in acc.iter_mut().zip(plane) {
                    *a += v;
                }
            }
            let (aop, cop) = sim.push_exposure(&acc)?;
            out.aop.push(aop);
            out.cop.extend(cop);
        }
        if let Some(sim) = &mut self.evs {
            sim.push_planes(planes)?;
        }
        Ok(())
    }

    /// Close the run. Fails if the frame pathway stopped inside a COP frame.
    #[allow(clippy::type_complexity)]
    pub fn finish(self) -> Result<(Option<PathwayStreams>, Option<(EventStream, DropStats)>)> {
        let tianmouc = match self.tianmouc {
            Some((_, out)) if !out.ratio_holds() || out.aop.is_empty() => {
                return Err(Error::Timing(format!(
                    "{} AOP frames do not fill a whole number of COP frames ({} AOP frames each)",
                    out.aop.len(),
                    out.cop_ratio
                )))
            }
            other => other.map(|(_, out)| out),
        };
        Ok((tianmouc, self.evs.map(EvsSim::finish)))
    }
}
