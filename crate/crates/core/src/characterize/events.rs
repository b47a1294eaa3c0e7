//! Event-sensor protocols: latency, contrast threshold and readout
//! saturation.
//!
//! Stimuli use duty levels `j / k^2` with `j * M` on-slots per frame, so
//! every plane of a frame carries exactly `j` mirrors per block and the
//! light is constant within the frame. Contrast steps are realized as the
//! ratio of two such levels. Latency trials each start from a pixel settled
//! at the baseline level.

use serde::Serialize;

use super::report::{Curve, Table};
use super::stats::{median, median_ci_half_width};
use crate::bench::Bench;
use crate::config::{ContrastProtocol, LatencyProtocol, SaturationProtocol};
use crate::error::{Error, Result};
use crate::evs::{DropStats, EvsConfig};
use crate::rng;
use crate::stimulus::flicker_mask;

/// Duty pair `(j_low, j_high)` out of `k2` whose log ratio is closest to
/// `delta`; ties go to the brighter pair.
pub fn contrast_pair(delta: f64, k2: u32) -> (u32, u32) {
    let mut best = (1, 2);
    let mut err = f64::INFINITY;
    for j2 in 2..=k2 {
        for j1 in 1..j2 {
            let e = ((j2 as f64 / j1 as f64).ln() - delta).abs();
            if e < err - 1e-12 || (e <= err + 1e-12 && j2 > best.1) {
                best = (j1, j2);
                err = e;
            }
        }
    }
    best
}

fn k2(bench: &Bench) -> u32 {
    bench.mapping().k_cop * bench.mapping().k_cop
}

/// Bench whose duty level `j` gives `intensity` photons per plane.
fn scaled(bench: &Bench, intensity: f64, j: u32) -> Result<Bench> {
    if !(intensity.is_finite() && intensity > 0.0) {
        return Err(Error::invalid("intensity", "must be > 0"));
    }
    bench.with_phi_max(intensity * k2(bench) as f64 / j as f64)
}

fn frame_ns(bench: &Bench) -> u64 {
    bench.planes_per_frame() as u64 * bench.timing().plane_period_ns
}

fn duty(bench: &Bench, j: u32) -> f64 {
    j as f64 / k2(bench) as f64
}

#[derive(Clone, Debug, Serialize)]
pub struct LatencyPoint {
    pub intensity: f64,
    /// Measured photons per plane at the target pixel before the step.
    pub intensity_realized: f64,
    pub median_latency_ns: f64,
    pub ci95_half_width_ns: f64,
    pub trials: usize,
}

#[derive(Clone, Debug, Serialize)]
pub struct LatencyReport {
    pub contrast_requested: f64,
    pub contrast_realized: f64,
    pub j_low: u32,
    pub j_high: u32,
    pub post_bus: bool,
    pub non_increasing: bool,
    pub points: Vec<LatencyPoint>,
}

impl LatencyReport {
    pub fn tables(&self) -> (Vec<Table>, Vec<Curve>) {
        let mut t = Table::new(
            "latency",
            &["intensity", "intensity_realized", "median_latency_ns", "ci95_half_width_ns", "trials"],
        );
        let mut c = Curve::new("latency", "photons per plane", "median latency (ns)").log_x();
        for p in &self.points {
            t.push(&[
                p.intensity,
                p.intensity_realized,
                p.median_latency_ns,
                p.ci95_half_width_ns,
                p.trials as f64,
            ]);
            c.push(p.intensity_realized, p.median_latency_ns);
        }
        (vec![t], vec![c])
    }
}

pub fn run_evs_latency(bench: &Bench, p: &LatencyProtocol) -> Result<LatencyReport> {
    if p.trials < 20 {
        return Err(Error::Precondition("latency needs at least 20 trials".into()));
    }
    if p.contrast <= bench.evs.theta_on {
        return Err(Error::Precondition(format!(
            "contrast {} does not exceed theta_on {}",
            p.contrast, bench.evs.theta_on
        )));
    }
    if p.intensities.is_empty() || p.segment_frames == 0 {
        return Err(Error::Precondition("latency needs intensities and segment_frames >= 1".into()));
    }
    let (j1, j2) = contrast_pair(p.contrast, k2(bench));
    let seg = p.segment_frames;
    let seg_ns = seg as u64 * frame_ns(bench);
    let t0 = bench.timing().trigger_offset_ns;

    let mut points = Vec::with_capacity(p.intensities.len());
    for &intensity in &p.intensities {
        let b = scaled(bench, intensity, j1)?;
        let mut frames = Vec::with_capacity(2 * seg);
        for n in 0..2 * seg {
            frames.push(b.uniform_frame(duty(&b, if n < seg { j1 } else { j2 }), n)?);
        }
        let realized = b.exposure(&frames[0])?[0] / b.planes_per_frame() as f64;
        let step = t0 + seg_ns;
        let mut latencies = Vec::with_capacity(p.trials);
        for t in 0..p.trials {
            let evs = EvsConfig {
                seed: rng::key(bench.evs.seed, "evs.latency.trial", &[t as u64]),
                ..b.evs.clone()
            };
            let (stream, _) = b.with_sensors(&b.tianmouc, &evs)?.run_evs(&frames)?;
            let first = stream
                .events
                .iter()
                .filter(|e| e.x == 0 && e.y == 0 && e.polarity == 1)
                .map(|e| if p.post_bus { e.t_ns } else { e.t_generated_ns })
                .filter(|&t| t >= step)
                .min()
                .ok_or_else(|| {
                    Error::MetricUndefined(format!(
                        "no ON event within {seg_ns} ns of the step in trial {t} at intensity {intensity}"
                    ))
                })?;
            latencies.push((first - step) as f64);
        }
        points.push(LatencyPoint {
            intensity,
            intensity_realized: realized,
            median_latency_ns: median(&latencies),
            ci95_half_width_ns: median_ci_half_width(&latencies),
            trials: latencies.len(),
        });
    }
    let mut order: Vec<&LatencyPoint> = points.iter().collect();
    order.sort_by(|a, b| a.intensity_realized.total_cmp(&b.intensity_realized));
    let non_increasing = order.windows(2).all(|w| w[1].median_latency_ns <= w[0].median_latency_ns);
    Ok(LatencyReport {
        contrast_requested: p.contrast,
        contrast_realized: (j2 as f64 / j1 as f64).ln(),
        j_low: j1,
        j_high: j2,
        post_bus: p.post_bus,
        non_increasing,
        points,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct ContrastPoint {
    pub requested: f64,
    pub realized: f64,
    pub j_low: u32,
    pub j_high: u32,
    pub responding_fraction: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct ContrastThresholdReport {
    /// Smallest listed contrast with at least half the pixels responding.
    pub threshold: f64,
    pub threshold_realized: f64,
    pub theta_on: f64,
    pub pixels: usize,
    /// Binomial 95% half-width of the responding fraction at the threshold.
    pub fraction_ci95: f64,
    pub points: Vec<ContrastPoint>,
}

impl ContrastThresholdReport {
    pub fn tables(&self) -> (Vec<Table>, Vec<Curve>) {
        let mut t = Table::new("contrast", &["requested", "realized", "responding_fraction"]);
        let mut c = Curve::new("psychometric", "log contrast", "responding fraction");
        for p in &self.points {
            t.push(&[p.requested, p.realized, p.responding_fraction]);
            c.push(p.realized, p.responding_fraction);
        }
        (vec![t], vec![c])
    }
}

pub fn run_evs_contrast_threshold(bench: &Bench, p: &ContrastProtocol) -> Result<ContrastThresholdReport> {
    let theta = bench.evs.theta_on;
    if p.contrasts.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("protocols.evs_contrast_threshold.contrasts", "must be ascending"));
    }
    let straddles = p.contrasts.first().is_some_and(|&c| c < theta) && p.contrasts.last().is_some_and(|&c| c >= theta);
    if !straddles {
        return Err(Error::Precondition(format!("contrasts do not straddle theta_on = {theta}")));
    }
    if p.window_frames == 0 {
        return Err(Error::Precondition("window_frames must be >= 1".into()));
    }
    let warmup = 2usize;
    let step = bench.timing().trigger_offset_ns + warmup as u64 * frame_ns(bench);
    let n_px = bench.grid().len();
    let mut points = Vec::with_capacity(p.contrasts.len());
    for &c in &p.contrasts {
        let (j1, j2) = contrast_pair(c, k2(bench));
        let b = scaled(bench, p.intensity, j1)?;
        let frames = (0..warmup + p.window_frames)
            .map(|n| b.uniform_frame(duty(&b, if n < warmup { j1 } else { j2 }), n))
            .collect::<Result<Vec<_>>>()?;
        let (stream, _) = b.run_evs(&frames)?;
        let mut hit = vec![false; n_px];
        for e in stream.events.iter().filter(|e| e.polarity == 1 && e.t_generated_ns >= step) {
            hit[e.y as usize * b.grid().width + e.x as usize] = true;
        }
        points.push(ContrastPoint {
            requested: c,
            realized: (j2 as f64 / j1 as f64).ln(),
            j_low: j1,
            j_high: j2,
            responding_fraction: hit.iter().filter(|&&h| h).count() as f64 / n_px as f64,
        });
    }
    let found = points
        .iter()
        .find(|p| p.responding_fraction >= 0.5)
        .ok_or_else(|| Error::MetricUndefined("no contrast reached 50% response".into()))?;
    let f = found.responding_fraction;
    Ok(ContrastThresholdReport {
        threshold: found.requested,
        threshold_realized: found.realized,
        theta_on: theta,
        pixels: n_px,
        fraction_ci95: 1.96 * (f * (1.0 - f) / n_px as f64).sqrt(),
        points,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct SaturationPoint {
    pub fraction: f64,
    pub generated: u64,
    pub emitted: u64,
    pub dropped: u64,
    pub ideal_rate: f64,
    pub emitted_rate: f64,
    pub shortfall: f64,
    pub drop_fraction: f64,
    pub max_queue_delay_ns: u64,
    pub window_ns: u64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SaturationReport {
    pub bus_rate: f64,
    pub fifo_depth: u64,
    pub contrast_realized: f64,
    /// First fraction with at least 5% shortfall, if any.
    pub knee_fraction: Option<f64>,
    pub points: Vec<SaturationPoint>,
    /// Bus statistics at the largest fraction.
    pub drop_stats: DropStats,
}

impl SaturationReport {
    pub fn tables(&self) -> (Vec<Table>, Vec<Curve>) {
        let mut t = Table::new(
            "saturation",
            &["fraction", "ideal_rate", "emitted_rate", "shortfall", "drop_fraction", "generated", "emitted", "dropped"],
        );
        let mut c = Curve::new("emitted_rate", "ideal event rate (ev/s)", "emitted event rate (ev/s)");
        for p in &self.points {
            t.push(&[
                p.fraction,
                p.ideal_rate,
                p.emitted_rate,
                p.shortfall,
                p.drop_fraction,
                p.generated as f64,
                p.emitted as f64,
                p.dropped as f64,
            ]);
            c.push(p.ideal_rate, p.emitted_rate);
        }
        (vec![t], vec![c])
    }
}

fn flicker_run(bench: &Bench, p: &SaturationProtocol, fraction: f64, j: (u32, u32)) -> Result<(SaturationPoint, DropStats)> {
    let grid = bench.grid();
    let mask = flicker_mask(grid, fraction);
    let fns = frame_ns(bench);
    let n_frames = ((p.duration_ms * 1e6) / fns as f64).ceil().max(1.0) as usize;
    let (lo, hi) = (duty(bench, j.0), duty(bench, j.1));
    let dark_frame = vec![lo; grid.len()];
    let lit_frame: Vec<f64> = mask.iter().map(|&a| if a { hi } else { lo }).collect();
    let frames = (0..n_frames)
        .map(|n| {
            let phase = (2.0 * p.frequency_hz * (n as u64 * fns) as f64 * 1e-9).floor() as u64;
            let r = if phase % 2 == 1 { lit_frame.clone() } else { dark_frame.clone() };
            bench.frame(r, n)
        })
        .collect::<Result<Vec<_>>>()?;
    let (stream, stats) = bench.run_evs(&frames)?;
    let t0 = bench.timing().trigger_offset_ns;
    let end = t0 + n_frames as u64 * fns;
    let first = stream.events.iter().map(|e| e.t_generated_ns).min();
    let first = first.unwrap_or(end).min(end.saturating_sub(1));
    let window = end - first;
    let in_window = stream.events.iter().filter(|e| e.t_ns < end).count() as f64;
    let w_s = window as f64 * 1e-9;
    let ideal_rate = stats.generated as f64 / w_s;
    let emitted_rate = in_window / w_s;
    let point = SaturationPoint {
        fraction,
        generated: stats.generated,
        emitted: stats.emitted,
        dropped: stats.dropped,
        ideal_rate,
        emitted_rate,
        shortfall: if ideal_rate > 0.0 {
            (1.0 - emitted_rate / ideal_rate).max(0.0)
        } else {
            0.0
        },
        drop_fraction: if stats.generated > 0 {
            stats.dropped as f64 / stats.generated as f64
        } else {
            0.0
        },
        max_queue_delay_ns: stats.max_queue_delay_ns,
        window_ns: window,
    };
    Ok((point, stats))
}

pub fn run_event_saturation(bench: &Bench, p: &SaturationProtocol) -> Result<SaturationReport> {
    if p.active_fractions.is_empty() || p.active_fractions.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::invalid("protocols.event_saturation.active_fractions", "must be ascending and nonempty"));
    }
    if !(p.frequency_hz > 0.0 && p.duration_ms > 0.0) {
        return Err(Error::invalid("protocols.event_saturation", "frequency_hz and duration_ms must be > 0"));
    }
    let j = contrast_pair(p.contrast, k2(bench));
    let base = scaled(bench, p.intensity, j.0)?;
    let max_fraction = *p.active_fractions.last().expect("nonempty");

    let mut evs: EvsConfig = base.evs.clone();
    if let Some(factor) = p.bus_rate_factor {
        if !(factor.is_finite() && factor > 0.0) {
            return Err(Error::invalid("protocols.event_saturation.bus_rate_factor", "must be > 0"));
        }
        let ideal = base.with_sensors(&base.tianmouc, &EvsConfig { bus_rate: f64::INFINITY, ..evs.clone() })?;
        let (pt, _) = flicker_run(&ideal, p, max_fraction, j)?;
        evs.bus_rate = (pt.ideal_rate / factor).min(1e9);
    }
    if let Some(ms) = p.fifo_window_ms {
        evs.fifo_depth = ((evs.bus_rate * ms * 1e-3).ceil() as u64).max(1);
    }
    let b = base.with_sensors(&base.tianmouc, &evs)?;

    let mut points = Vec::with_capacity(p.active_fractions.len());
    let mut last_stats = DropStats::default();
    for &f in &p.active_fractions {
        let (pt, stats) = flicker_run(&b, p, f, j)?;
        points.push(pt);
        last_stats = stats;
    }
    Ok(SaturationReport {
        bus_rate: evs.bus_rate,
        fifo_depth: evs.fifo_depth,
        contrast_realized: (j.1 as f64 / j.0 as f64).ln(),
        knee_fraction: points.iter().find(|p| p.shortfall >= 0.05).map(|p| p.fraction),
        points,
        drop_stats: last_stats,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pair_choice() {
        assert_eq!(contrast_pair(0.7, 16), (8, 16));
        assert_eq!(contrast_pair(0.4, 16), (10, 15));
        assert_eq!(contrast_pair(0.25, 16), (7, 9));
        let (a, b) = contrast_pair(0.15, 16);
        assert!(((b as f64 / a as f64).ln() - 0.154).abs() < 1e-3);
    }
}
