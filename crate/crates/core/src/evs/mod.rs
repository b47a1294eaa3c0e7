//! Event-camera model.
//!
//! Each pixel tracks `L(t)`, a first-order low-pass of `ln(I + log_eps)`
//! with cutoff `f_c(I)`. The input is constant within a plane, so `L` is an
//! exact exponential there and threshold crossings are solved in closed form.
//! After an event the reference moves by exactly one threshold and the pixel
//! is silent for `tau_ref_ns`. Generated events then pass a single FIFO
//! drained at `bus_rate`.

mod stream;

use std::collections::VecDeque;

use rand::Rng;
use rand_distr::{Distribution, Poisson, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::projector::PhotonField;
use crate::rng;
use crate::stimulus::Grid;

pub use stream::{EventStream, EVT1_MAGIC, EVT1_RECORD_BYTES, EVT1_VERSION};

/// Slack on threshold comparisons, in log units.
const LEVEL_EPS: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case", deny_unknown_fields)]
pub enum Bandwidth {
    /// `L` follows the input instantly.
    Infinite,
    /// `f_c = min(f_max, f_dark + k_f * I)` in Hz, `I` in photons per plane.
    Linear { f_max: f64, f_dark: f64, k_f: f64 },
}

impl Bandwidth {
    /// Cutoff in Hz; infinite for [`Bandwidth::Infinite`].
    pub fn cutoff_hz(&self, photons: f64) -> f64 {
        match *self {
            Bandwidth::Infinite => f64::INFINITY,
            Bandwidth::Linear { f_max, f_dark, k_f } => f_max.min(f_dark + k_f * photons),
        }
    }

    /// Time constant `1 / (2 pi f_c)` in ns.
    pub fn tau_ns(&self, photons: f64) -> f64 {
        1e9 / (2.0 * std::f64::consts::PI * self.cutoff_hz(photons))
    }

    /// Linear model with a constant time constant.
    pub fn constant_tau(tau_ns: f64) -> Self {
        let f = 1e9 / (2.0 * std::f64::consts::PI * tau_ns);
        Bandwidth::Linear {
            f_max: f,
            f_dark: f,
            k_f: 0.0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvsConfig {
    pub theta_on: f64,
    pub theta_off: f64,
    /// Per-pixel std of both thresholds.
    pub threshold_sigma: f64,
    pub tau_ref_ns: u64,
    pub bandwidth: Bandwidth,
    pub log_eps: f64,
    /// Background events per pixel per second.
    pub noise_rate_hz: f64,
    /// Events per second through the readout; `inf` disables the bus.
    pub bus_rate: f64,
    pub fifo_depth: u64,
    /// Interval of the emitted-rate histogram.
    pub histogram_bin_ns: u64,
    #[serde(skip)]
    pub seed: u64,
}

impl Default for EvsConfig {
    fn default() -> Self {
        Self {
            theta_on: 0.2,
            theta_off: 0.2,
            threshold_sigma: 0.0,
            tau_ref_ns: 1_000_000,
            bandwidth: Bandwidth::Linear {
                f_max: 10_000.0,
                f_dark: 10.0,
                k_f: 10.0,
            },
            log_eps: 1e-3,
            noise_rate_hz: 0.0,
            bus_rate: 1e8,
            fifo_depth: 4096,
            histogram_bin_ns: 1_000_000,
            seed: 0,
        }
    }
}

impl EvsConfig {
    /// No refractory period, no noise, no jitter, unlimited bus.
    pub fn ideal(mut self) -> Self {
        self.tau_ref_ns = 0;
        self.threshold_sigma = 0.0;
        self.noise_rate_hz = 0.0;
        self.bus_rate = f64::INFINITY;
        self
    }

    pub fn validate(&self) -> Result<()> {
        for (name, v) in [("evs.theta_on", self.theta_on), ("evs.theta_off", self.theta_off)] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::invalid(name, "must be > 0"));
            }
        }
        if !(self.threshold_sigma.is_finite() && self.threshold_sigma >= 0.0) {
            return Err(Error::invalid("evs.threshold_sigma", "must be >= 0"));
        }
        if !(self.log_eps.is_finite() && self.log_eps > 0.0) {
            return Err(Error::invalid("evs.log_eps", "must be > 0"));
        }
        if !(self.noise_rate_hz.is_finite() && self.noise_rate_hz >= 0.0) {
            return Err(Error::invalid("evs.noise_rate_hz", "must be >= 0"));
        }
        if !(self.bus_rate > 0.0 && self.bus_rate <= 1e9) && self.bus_rate != f64::INFINITY {
            return Err(Error::invalid(
                "evs.bus_rate",
                "must be in (0, 1e9] events/s or inf",
            ));
        }
        if self.fifo_depth < 1 {
            return Err(Error::invalid("evs.fifo_depth", "must be >= 1"));
        }
        if self.histogram_bin_ns == 0 {
            return Err(Error::invalid("evs.histogram_bin_ns", "must be > 0"));
        }
        if let Bandwidth::Linear { f_max, f_dark, k_f } = self.bandwidth {
            if !(f_max.is_finite() && f_max > 0.0) {
                return Err(Error::invalid("evs.bandwidth.f_max", "must be > 0"));
            }
            if !(f_dark.is_finite() && f_dark > 0.0) {
                return Err(Error::invalid("evs.bandwidth.f_dark", "must be > 0"));
            }
            if !(k_f.is_finite() && k_f >= 0.0) {
                return Err(Error::invalid("evs.bandwidth.k_f", "must be >= 0"));
            }
        }
        Ok(())
    }

    /// Per-pixel `(theta_on, theta_off)` after jitter.
    pub fn pixel_thresholds(&self, x: usize, y: usize) -> (f64, f64) {
        if self.threshold_sigma == 0.0 {
            return (self.theta_on, self.theta_off);
        }
        let mut r = rng::rng_for(self.seed, "evs.threshold", &[x as u64, y as u64]);
        let a: f64 = StandardNormal.sample(&mut r);
        let b: f64 = StandardNormal.sample(&mut r);
        let floor_on = 0.01 * self.theta_on;
        let floor_off = 0.01 * self.theta_off;
        (
            (self.theta_on + self.threshold_sigma * a).max(floor_on),
            (self.theta_off + self.threshold_sigma * b).max(floor_off),
        )
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Event {
    /// Output time, after the bus.
    pub t_ns: u64,
    pub x: u16,
    pub y: u16,
    pub polarity: i8,
    /// Time the pixel fired.
    pub t_generated_ns: u64,
}

impl Event {
    fn order_key(&self) -> (u64, u16, u16, i8) {
        (self.t_ns, self.y, self.x, self.polarity)
    }
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DropStats {
    pub generated: u64,
    pub emitted: u64,
    pub dropped: u64,
    pub max_queue_delay_ns: u64,
    pub histogram_bin_ns: u64,
    /// Emitted events per bin of output time, from the field start.
    pub emitted_per_bin: Vec<u64>,
    /// Dropped events per bin of generation time.
    pub dropped_per_bin: Vec<u64>,
}

/// Piecewise-exponential pixel state.
struct Pixel {
    l: f64,
    base: f64,
    n_on: i64,
    n_off: i64,
    theta_on: f64,
    theta_off: f64,
    silent_until: f64,
}

impl Pixel {
    fn new(l0: f64, theta_on: f64, theta_off: f64) -> Self {
        Self {
            l: l0,
            base: l0,
            n_on: 0,
            n_off: 0,
            theta_on,
            theta_off,
            silent_until: f64::NEG_INFINITY,
        }
    }

    fn reference(&self) -> f64 {
        self.base + self.n_on as f64 * self.theta_on - self.n_off as f64 * self.theta_off
    }

    /// Advance through one plane `[ts, te)` with target `x` and time
    /// constant `tau` (0 = instant). Calls `emit(t, polarity)` per event.
    fn step(&mut self, ts: f64, te: f64, x: f64, tau: f64, tau_ref: f64, mut emit: impl FnMut(f64, i8)) {
        let at = |l_from: f64, t_from: f64, t: f64| -> f64 {
            if tau == 0.0 {
                x
            } else {
                x + (l_from - x) * (-(t - t_from) / tau).exp()
            }
        };
        let (mut tc, mut lc) = (ts, if tau == 0.0 { x } else { self.l });
        loop {
            let t_start = tc.max(self.silent_until);
            if t_start >= te {
                break;
            }
            let l_start = at(lc, tc, t_start);
            let r = self.reference();
            let up = r + self.theta_on - LEVEL_EPS;
            let dn = r - self.theta_off + LEVEL_EPS;
            let hit = if l_start >= up {
                Some((t_start, 1))
            } else if l_start <= dn {
                Some((t_start, -1))
            } else if tau > 0.0 && x > up {
                Some((t_start + tau * ((x - l_start) / (x - up)).ln(), 1))
            } else if tau > 0.0 && x < dn {
                Some((t_start + tau * ((x - l_start) / (x - dn)).ln(), -1))
            } else {
                None
            };
            match hit {
                Some((t, p)) if t < te => {
                    emit(t, p);
                    if p > 0 {
                        self.n_on += 1;
                    } else {
                        self.n_off += 1;
                    }
                    self.silent_until = t + tau_ref;
                    lc = at(l_start, t_start, t);
                    tc = t;
                }
                _ => break,
            }
        }
        self.l = at(lc, tc, te);
    }
}

/// Event count for a log-intensity trajectory with no bus, no noise, no
/// refractory period and no low-pass lag.
pub fn ideal_event_count(trajectory: &[f64], cfg: &EvsConfig) -> u64 {
    let Some(&first) = trajectory.first() else {
        return 0;
    };
    let mut px = Pixel::new(first, cfg.theta_on, cfg.theta_off);
    let mut n = 0u64;
    for (m, &x) in trajectory.iter().enumerate() {
        px.step(m as f64, m as f64 + 1.0, x, 0.0, 0.0, |_, _| n += 1);
    }
    n
}

fn background(cfg: &EvsConfig, x: usize, y: usize, duration_ns: f64) -> Vec<(f64, i8)> {
    if cfg.noise_rate_hz == 0.0 || duration_ns <= 0.0 {
        return Vec::new();
    }
    let mut r = rng::rng_for(cfg.seed, "evs.noise", &[x as u64, y as u64]);
    let mean = cfg.noise_rate_hz * duration_ns * 1e-9;
    let n = Poisson::new(mean).map(|p| p.sample(&mut r) as u64).unwrap_or(0);
    (0..n)
        .map(|_| {
            let t = r.random::<f64>() * duration_ns;
            (t, if r.random::<bool>() { 1 } else { -1 })
        })
        .collect()
}

/// Pass time-sorted generated events through the FIFO.
fn bus(generated: Vec<Event>, cfg: &EvsConfig, t0_ns: u64, duration_ns: u64) -> (Vec<Event>, DropStats) {
    let bins = duration_ns.div_ceil(cfg.histogram_bin_ns).max(1) as usize;
    let mut stats = DropStats {
        generated: generated.len() as u64,
        histogram_bin_ns: cfg.histogram_bin_ns,
        emitted_per_bin: vec![0; bins],
        dropped_per_bin: vec![0; bins],
        ..Default::default()
    };
    let bin_of = |t: u64| (((t.saturating_sub(t0_ns)) / cfg.histogram_bin_ns) as usize).min(bins - 1);
    let mut out = Vec::with_capacity(generated.len());
    if cfg.bus_rate == f64::INFINITY {
        for e in generated {
            stats.emitted_per_bin[bin_of(e.t_ns)] += 1;
            out.push(e);
        }
        stats.emitted = out.len() as u64;
        return (out, stats);
    }
    let service = 1e9 / cfg.bus_rate;
    let mut busy_until = f64::NEG_INFINITY;
    // departure times of events still held in the FIFO
    let mut queue: VecDeque<u64> = VecDeque::new();
    for mut e in generated {
        while queue.front().is_some_and(|&d| d <= e.t_generated_ns) {
            queue.pop_front();
        }
        if queue.len() as u64 >= cfg.fifo_depth {
            stats.dropped += 1;
            stats.dropped_per_bin[bin_of(e.t_generated_ns)] += 1;
            continue;
        }
        let start = (e.t_generated_ns as f64).max(busy_until);
        busy_until = start + service;
        let out_ns = start.ceil() as u64;
        e.t_ns = out_ns;
        queue.push_back(busy_until.ceil() as u64);
        stats.max_queue_delay_ns = stats.max_queue_delay_ns.max(out_ns - e.t_generated_ns);
        stats.emitted_per_bin[bin_of(out_ns)] += 1;
        out.push(e);
    }
    stats.emitted = out.len() as u64;
    (out, stats)
}

struct PixelState {
    pixel: Option<Pixel>,
    thresholds: (f64, f64),
    events: Vec<(f64, i8)>,
}

/// Streaming simulator: feed plane-major chunks, then [`EvsSim::finish`].
pub struct EvsSim {
    cfg: EvsConfig,
    grid: Grid,
    t0_ns: u64,
    plane_ns: u64,
    planes: u64,
    pixels: Vec<PixelState>,
}

impl EvsSim {
    pub fn new(cfg: &EvsConfig, grid: Grid, plane_period_ns: u64, t0_ns: u64) -> Result<Self> {
        cfg.validate()?;
        if grid.is_empty() {
            return Err(Error::Precondition("event sensor grid is empty".into()));
        }
        if grid.width > u16::MAX as usize + 1 || grid.height > u16::MAX as usize + 1 {
            return Err(Error::Geometry("grid exceeds 16-bit event coordinates".into()));
        }
        if plane_period_ns == 0 {
            return Err(Error::invalid("timing.plane_period_ns", "must be > 0"));
        }
        let pixels = (0..grid.len())
            .map(|i| PixelState {
                pixel: None,
                thresholds: cfg.pixel_thresholds(i % grid.width, i / grid.width),
                events: Vec::new(),
            })
            .collect();
        Ok(Self {
            cfg: cfg.clone(),
            grid,
            t0_ns,
            plane_ns: plane_period_ns,
            planes: 0,
            pixels,
        })
    }

    pub fn planes_seen(&self) -> u64 {
        self.planes
    }

    /// Append planes of photons per pixel, plane-major.
    pub fn push_planes(&mut self, planes: &[f64]) -> Result<()> {
        let n_px = self.grid.len();
        if planes.len() % n_px != 0 {
            return Err(Error::Geometry("values are not a whole number of planes".into()));
        }
        let n = planes.len() / n_px;
        let first = self.planes;
        let plane_ns = self.plane_ns as f64;
        let cfg = &self.cfg;
        let tau_ref = cfg.tau_ref_ns as f64;
        self.pixels.par_iter_mut().enumerate().for_each(|(i, st)| {
            for m in 0..n {
                let photons = planes[m * n_px + i];
                let x = (photons + cfg.log_eps).ln();
                let (on, off) = st.thresholds;
                let px = st.pixel.get_or_insert_with(|| Pixel::new(x, on, off));
                let tau = match cfg.bandwidth {
                    Bandwidth::Infinite => 0.0,
                    _ => cfg.bandwidth.tau_ns(photons),
                };
                let ts = (first + m as u64) as f64 * plane_ns;
                let events = &mut st.events;
                px.step(ts, ts + plane_ns, x, tau, tau_ref, |t, p| events.push((t, p)));
            }
        });
        self.planes += n as u64;
        Ok(())
    }

    pub fn push_field(&mut self, field: &PhotonField) -> Result<()> {
        if field.grid() != self.grid || field.plane_period_ns != self.plane_ns {
            return Err(Error::Geometry("photon field does not match the event sensor".into()));
        }
        for m in 0..field.plane_count() {
            self.push_planes(field.plane(m))?;
        }
        Ok(())
    }

    /// Add background activity, order events and run the readout bus.
    pub fn finish(self) -> (EventStream, DropStats) {
        let w = self.grid.width;
        let duration = self.planes * self.plane_ns;
        let cfg = &self.cfg;
        let t0 = self.t0_ns;
        let per_pixel: Vec<Vec<Event>> = self
            .pixels
            .into_par_iter()
            .enumerate()
            .map(|(i, st)| {
                let (x, y) = (i % w, i / w);
                let mut evs = st.events;
                evs.extend(background(cfg, x, y, duration as f64));
                evs.into_iter()
                    .map(|(t, p)| {
                        let t_ns = t0 + t.round() as u64;
                        Event {
                            t_ns,
                            x: x as u16,
                            y: y as u16,
                            polarity: p,
                            t_generated_ns: t_ns,
                        }
                    })
                    .collect()
            })
            .collect();
        let mut generated: Vec<Event> = per_pixel.into_iter().flatten().collect();
        generated.par_sort_unstable_by_key(Event::order_key);
        let (events, stats) = bus(generated, cfg, t0, duration);
        (
            EventStream {
                width: self.grid.width,
                height: self.grid.height,
                events,
            },
            stats,
        )
    }
}

/// Simulate the event sensor over a photon field.
pub fn simulate(field: &PhotonField, cfg: &EvsConfig) -> Result<(EventStream, DropStats)> {
    if field.plane_count() == 0 || field.pixels() == 0 {
        return Err(Error::Precondition("photon field is empty".into()));
    }
    let mut sim = EvsSim::new(cfg, field.grid(), field.plane_period_ns, field.t0_ns)?;
    sim.push_field(field)?;
    Ok(sim.finish())
}
