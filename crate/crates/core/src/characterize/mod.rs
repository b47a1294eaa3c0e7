//! Characterization protocols and their reports.
//!
//! Each protocol runs on a small patch of the configured bench (the patch
//! grid is part of the protocol settings) and is a pure function of the
//! configuration and seed.

mod diff;
mod emva;
mod events;
pub mod report;
pub mod stats;

use std::str::FromStr;

use serde::Serialize;

use crate::bench::Bench;
use crate::config::BenchConfig;
use crate::error::{Error, Result};

pub use diff::{run_diff_snr, DiffSnr, DiffSnrReport};
pub use emva::{
    run_linearity, run_photon_transfer, run_snr_dr, run_uniformity, LinearityLevel, LinearityReport,
    PhotonTransferReport, PtcLevel, SnrLevel, SnrReport, UniformityReport,
};
pub use events::{
    contrast_pair, run_event_saturation, run_evs_contrast_threshold, run_evs_latency, ContrastPoint,
    ContrastThresholdReport, LatencyPoint, LatencyReport, SaturationPoint, SaturationReport,
};
pub use report::{render_dir, Curve, Report, Table};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Protocol {
    Linearity,
    Uniformity,
    SnrDr,
    PhotonTransfer,
    EvsLatency,
    EvsContrastThreshold,
    EventSaturation,
    DiffSnr,
}

impl Protocol {
    pub const ALL: [Protocol; 8] = [
        Protocol::Linearity,
        Protocol::Uniformity,
        Protocol::SnrDr,
        Protocol::PhotonTransfer,
        Protocol::EvsLatency,
        Protocol::EvsContrastThreshold,
        Protocol::EventSaturation,
        Protocol::DiffSnr,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Protocol::Linearity => "linearity",
            Protocol::Uniformity => "uniformity",
            Protocol::SnrDr => "snr_dr",
            Protocol::PhotonTransfer => "photon_transfer",
            Protocol::EvsLatency => "evs_latency",
            Protocol::EvsContrastThreshold => "evs_contrast_threshold",
            Protocol::EventSaturation => "event_saturation",
            Protocol::DiffSnr => "diff_snr",
        }
    }
}

impl FromStr for Protocol {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Protocol::ALL
            .into_iter()
            .find(|p| p.name() == s)
            .ok_or_else(|| {
                let names: Vec<&str> = Protocol::ALL.iter().map(|p| p.name()).collect();
                Error::invalid("protocol", format!("unknown protocol `{s}` (expected one of {})", names.join(", ")))
            })
    }
}

fn assemble<T: Serialize>(cfg: &BenchConfig, p: Protocol, metrics: &T, (tables, curves): (Vec<Table>, Vec<Curve>)) -> Report {
    Report {
        protocol: p.name().into(),
        config_hash: cfg.hash(),
        seed: cfg.seed,
        metrics: serde_json::to_value(metrics).expect("metrics serialize"),
        tables,
        curves,
    }
}

/// Run protocol `p` against `cfg`.
pub fn run(cfg: &BenchConfig, p: Protocol) -> Result<Report> {
    let pc = &cfg.protocols;
    Ok(match p {
        Protocol::Linearity => {
            let r = run_linearity(&Bench::patch(cfg, pc.linearity.grid)?, &pc.linearity)?;
            assemble(cfg, p, &r, r.tables())
        }
        Protocol::Uniformity => {
            let r = run_uniformity(&Bench::patch(cfg, pc.uniformity.grid)?, &pc.uniformity)?;
            assemble(cfg, p, &r, r.tables())
        }
        Protocol::SnrDr => {
            let r = run_snr_dr(&Bench::patch(cfg, pc.snr_dr.grid)?, &pc.snr_dr)?;
            assemble(cfg, p, &r, r.tables())
        }
        Protocol::PhotonTransfer => {
            let r = run_photon_transfer(&Bench::patch(cfg, pc.photon_transfer.grid)?, &pc.photon_transfer)?;
            assemble(cfg, p, &r, r.tables())
        }
        Protocol::EvsLatency => {
            let bench = Bench::patch(cfg, crate::stimulus::Grid::new(2, 2))?;
            let r = run_evs_latency(&bench, &pc.evs_latency)?;
            assemble(cfg, p, &r, r.tables())
        }
        Protocol::EvsContrastThreshold => {
            let q = &pc.evs_contrast_threshold;
            let r = run_evs_contrast_threshold(&Bench::patch(cfg, q.grid)?, q)?;
            assemble(cfg, p, &r, r.tables())
        }
        Protocol::EventSaturation => {
            let q = &pc.event_saturation;
            let r = run_event_saturation(&Bench::patch(cfg, q.grid)?, q)?;
            assemble(cfg, p, &r, r.tables())
        }
        Protocol::DiffSnr => {
            let r = run_diff_snr(&Bench::patch(cfg, pc.diff_snr.grid)?, &pc.diff_snr)?;
            assemble(cfg, p, &r, r.tables())
        }
    })
}
