//! Difference-signal SNR of the AOP pathway.
//!
//! TD: the level sequence `u1, u1, u2, u2` repeats; frames after an up
//! step carry the signal, frames after an unchanged level carry the
//! noise. SD: a static vertical edge; pixels whose kernel neighbour lies
//! across the edge carry the signal, their frame-to-frame spread the noise.

use serde::Serialize;

use super::report::{Curve, Table};
use super::stats::{mean, PixelStats};
use crate::bench::Bench;
use crate::config::DiffSnrProtocol;
use crate::encoder::quantize_duty;
use crate::error::{Error, Result};
use crate::tianmouc::Tianmouc;

#[derive(Clone, Debug, Serialize)]
pub struct DiffSnr {
    pub signal: f64,
    pub noise: f64,
    /// `None` when the noise is zero.
    pub snr: Option<f64>,
    pub infinite: bool,
    pub samples: usize,
}

impl DiffSnr {
    fn new(signal: f64, noise: f64, samples: usize) -> Self {
        let infinite = noise == 0.0;
        Self {
            signal,
            noise,
            snr: (!infinite).then(|| signal / noise),
            infinite,
            samples,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DiffSnrReport {
    pub delta_electrons_requested: f64,
    pub delta_electrons_realized: f64,
    pub u_low: f64,
    pub u_high: f64,
    /// Mean electrons per AOP pixel per frame at the two levels.
    pub electrons_low: f64,
    pub electrons_high: f64,
    /// Shot-noise prediction `g_td * sqrt(e_low + e_high)` for static TD.
    pub expected_td_shot_noise: f64,
    pub trials: usize,
    pub td: DiffSnr,
    pub sd: Option<DiffSnr>,
}

impl DiffSnrReport {
    pub fn tables(&self) -> (Vec<Table>, Vec<Curve>) {
        let mut t = Table::new("diff_snr", &["channel", "signal", "noise", "snr"]);
        t.push(&[0.0, self.td.signal, self.td.noise, self.td.snr.unwrap_or(f64::INFINITY)]);
        if let Some(sd) = &self.sd {
            t.push(&[1.0, sd.signal, sd.noise, sd.snr.unwrap_or(f64::INFINITY)]);
        }
        (vec![t], vec![])
    }
}

pub fn run_diff_snr(bench: &Bench, p: &DiffSnrProtocol) -> Result<DiffSnrReport> {
    let grid = bench.grid();
    if grid.width % 4 != 0 {
        return Err(Error::invalid("protocols.diff_snr.grid", "width must be a multiple of 4"));
    }
    if p.trials < 2 {
        return Err(Error::Precondition("diff SNR needs at least 2 trials".into()));
    }
    if !(0.0..=1.0).contains(&p.baseline) {
        return Err(Error::invalid("protocols.diff_snr.baseline", "outside [0, 1]"));
    }
    let cfg = &bench.tianmouc;
    let m = bench.planes_per_frame() as u32;
    let k = bench.mapping().k_cop;
    let slots = (m * k * k) as f64;
    let level = |u: f64| quantize_duty(u, m, k) as f64 / slots;

    // electrons per AOP pixel per frame, at u = 1
    let full = 4.0 * cfg.qe * mean(&bench.exposure(&bench.uniform_frame(1.0, 0)?)?);
    let u1 = level(p.baseline);
    let u2 = level(u1 + p.delta_electrons / full);
    if u2 > 1.0 || u2 <= u1 {
        return Err(Error::Precondition(format!(
            "a step of {} electrons from duty {u1} is not realizable",
            p.delta_electrons
        )));
    }
    let f1 = bench.uniform_frame(u1, 0)?;
    let f2 = bench.uniform_frame(u2, 0)?;
    let e1 = bench.exposure(&f1)?;
    let e2 = bench.exposure(&f2)?;
    let el1 = 4.0 * cfg.qe * mean(&e1);
    let el2 = 4.0 * cfg.qe * mean(&e2);
    let delta = el2 - el1;
    if (cfg.g_td * delta).abs() > 127.0 {
        return Err(Error::Saturated(format!(
            "TD step of {:.1} DN exceeds the 7-bit range",
            cfg.g_td * delta
        )));
    }

    // TD
    let mut sim = Tianmouc::new(cfg, grid, 0)?;
    let (mut steps, mut statics) = (Vec::new(), Vec::new());
    for n in 0..4 * p.trials + 1 {
        let e = if n % 4 < 2 { &e1 } else { &e2 };
        let (aop, _) = sim.push_exposure(e)?;
        match n % 4 {
            _ if n == 0 => {}
            2 => steps.extend(aop.td.iter().map(|&v| v as f64)),
            1 | 3 => statics.extend(aop.td.iter().map(|&v| v as f64)),
            _ => {}
        }
    }
    if steps.iter().any(|v| v.abs() >= 127.0) {
        return Err(Error::Saturated("TD step frames clip at +-127".into()));
    }
    let m_static = mean(&statics);
    let noise_td = (statics.iter().map(|v| (v - m_static).powi(2)).sum::<f64>() / (statics.len() as f64 - 1.0)).sqrt();
    let td = DiffSnr::new(mean(&steps).abs(), noise_td, steps.len());

    // SD on a static edge
    let sd = match cfg.sd_kernels.iter().position(|k| k[0] > 0) {
        None => None,
        Some(ki) => {
            let dx = cfg.sd_kernels[ki][0] as usize;
            let dy = cfg.sd_kernels[ki][1];
            let half = grid.width / 2;
            let radiance = (0..grid.len()).map(|i| if i % grid.width < half { u1 } else { u2 }).collect();
            let edge = bench.exposure(&bench.frame(radiance, 0)?)?;
            let aw = grid.width / 2;
            let ah = grid.height / 2;
            let e_col = half / 2;
            let sites: Vec<usize> = (0..ah)
                .filter(|&y| {
                    let ny = y as i64 + dy as i64;
                    ny >= 0 && (ny as usize) < ah
                })
                .flat_map(|y| (e_col.saturating_sub(dx)..e_col).map(move |x| y * aw + x))
                .collect();
            let mut sim = Tianmouc::new(cfg, grid, 0)?;
            let mut stats = PixelStats::new(sites.len());
            for _ in 0..2 * p.trials {
                let (aop, _) = sim.push_exposure(&edge)?;
                let v: Vec<f64> = sites.iter().map(|&i| aop.sd[ki][i] as f64).collect();
                stats.push(&v);
            }
            if stats.means().iter().any(|v| v.abs() >= 127.0) {
                return Err(Error::Saturated("SD edge clips at +-127".into()));
            }
            let noise = stats.temporal_variance().max(0.0).sqrt();
            Some(DiffSnr::new(stats.grand_mean().abs(), noise, stats.frames() * sites.len()))
        }
    };

    Ok(DiffSnrReport {
        delta_electrons_requested: p.delta_electrons,
        delta_electrons_realized: delta,
        u_low: u1,
        u_high: u2,
        electrons_low: el1,
        electrons_high: el2,
        expected_td_shot_noise: cfg.g_td * (el1 + el2).sqrt(),
        trials: p.trials,
        td,
        sd,
    })
}
