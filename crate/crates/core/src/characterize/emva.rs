//! Frame-sensor protocols on the COP pathway: linearity, uniformity,
//! SNR / dynamic range and photon transfer.

use serde::Serialize;

use super::report::{Curve, Table};
use super::stats::{linear_fit, slope_stderr, PixelStats};
use crate::bench::Bench;
use crate::config::{LinearityProtocol, PhotonTransferProtocol, SnrProtocol, UniformityProtocol};
use crate::error::{Error, Result};
use crate::tianmouc::Tianmouc;

/// Photons per pixel over one COP exposure of a static uniform level.
pub(crate) fn static_cop_photons(bench: &Bench, u: f64) -> Result<Vec<f64>> {
    let ratio = bench.timing().cop_ratio as f64;
    Ok(bench
        .exposure(&bench.uniform_frame(u, 0)?)?
        .into_iter()
        .map(|v| v * ratio)
        .collect())
}

/// Temporal statistics of `frames` COP frames under static illumination.
/// `stream` separates the noise of different measurement series.
pub(crate) fn cop_stats(sensor: &Tianmouc, photons: &[f64], frames: usize, stream: u64) -> PixelStats {
    let mut s = PixelStats::new(photons.len());
    for f in 0..frames {
        s.push(&sensor.cop_frame(photons, (stream << 32) | f as u64).mosaic);
    }
    s
}

fn mean(v: &[f64]) -> f64 {
    super::stats::mean(v)
}

#[derive(Clone, Debug, Serialize)]
pub struct LinearityLevel {
    pub u: f64,
    pub photons: f64,
    pub mean_dn: f64,
    pub used: bool,
    pub residual_dn: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct LinearityReport {
    /// DN per photon.
    pub slope: f64,
    pub intercept: f64,
    /// Max |residual| over the fit range, percent of full scale.
    pub le_pct: f64,
    pub full_scale_dn: f64,
    pub frames_per_level: usize,
    pub levels: Vec<LinearityLevel>,
}

impl LinearityReport {
    pub fn tables(&self) -> (Vec<Table>, Vec<Curve>) {
        let mut t = Table::new("levels", &["u", "photons", "mean_dn", "used", "residual_dn"]);
        let mut c = Curve::new("residual", "photons per pixel", "residual (DN)");
        for l in &self.levels {
            t.push(&[l.u, l.photons, l.mean_dn, l.used as u8 as f64, l.residual_dn]);
            if l.used {
                c.push(l.photons, l.residual_dn);
            }
        }
        (vec![t], vec![c])
    }
}

pub fn run_linearity(bench: &Bench, p: &LinearityProtocol) -> Result<LinearityReport> {
    if p.frames_per_level == 0 {
        return Err(Error::Precondition("frames_per_level must be >= 1".into()));
    }
    let cfg = &bench.tianmouc;
    let sensor = Tianmouc::new(cfg, bench.grid(), 0)?;
    let full_scale = cfg.saturation_dn();
    let dark = cop_stats(&sensor, &static_cop_photons(bench, 0.0)?, p.frames_per_level, 0).grand_mean();

    let mut levels = Vec::with_capacity(p.levels.len());
    for (i, &u) in p.levels.iter().enumerate() {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::invalid("protocols.linearity.levels", format!("{u} outside [0, 1]")));
        }
        let photons = static_cop_photons(bench, u)?;
        let s = cop_stats(&sensor, &photons, p.frames_per_level, i as u64 + 1);
        levels.push(LinearityLevel {
            u,
            photons: mean(&photons),
            mean_dn: s.grand_mean() - dark,
            used: false,
            residual_dn: f64::NAN,
        });
    }
    if !levels.is_empty() && levels.iter().all(|l| l.mean_dn >= 0.95 * full_scale) {
        return Err(Error::Saturated("every level is at or above 95% of full scale".into()));
    }
    let lo = p.levels.iter().cloned().fold(f64::INFINITY, f64::min);
    let hi = p.levels.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if p.levels.len() < 5 || lo > 0.05 + 1e-9 || hi < 0.95 - 1e-9 {
        return Err(Error::Precondition(
            "linearity needs at least 5 levels spanning [0.05, 0.95]".into(),
        ));
    }
    for l in &mut levels {
        l.used = l.mean_dn >= 0.05 * full_scale && l.mean_dn <= 0.95 * full_scale;
    }
    let (x, y): (Vec<f64>, Vec<f64>) = levels.iter().filter(|l| l.used).map(|l| (l.photons, l.mean_dn)).unzip();
    if x.len() < 2 {
        return Err(Error::Precondition("fewer than 2 levels inside 5-95% of full scale".into()));
    }
    let (slope, intercept) = linear_fit(&x, &y)?;
    let mut worst: f64 = 0.0;
    for l in &mut levels {
        l.residual_dn = l.mean_dn - (slope * l.photons + intercept);
        if l.used {
            worst = worst.max(l.residual_dn.abs());
        }
    }
    Ok(LinearityReport {
        slope,
        intercept,
        le_pct: 100.0 * worst / full_scale,
        full_scale_dn: full_scale,
        frames_per_level: p.frames_per_level,
        levels,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct UniformityReport {
    pub dsnu_dn: f64,
    pub prnu_pct: f64,
    /// Approximate 95% half-widths from the chi-square spread of a
    /// spatial variance over `pixels` samples.
    pub dsnu_ci95_dn: f64,
    pub prnu_ci95_pct: f64,
    pub mu_dark_dn: f64,
    pub mu_half_dn: f64,
    pub s2_dark: f64,
    pub s2_half: f64,
    pub half_level_u: f64,
    pub half_fraction_of_saturation: f64,
    pub n_dark: usize,
    pub n_half: usize,
    pub pixels: usize,
}

impl UniformityReport {
    pub fn tables(&self) -> (Vec<Table>, Vec<Curve>) {
        let mut t = Table::new("summary", &["dsnu_dn", "prnu_pct", "mu_dark_dn", "mu_half_dn", "half_level_u"]);
        t.push(&[self.dsnu_dn, self.prnu_pct, self.mu_dark_dn, self.mu_half_dn, self.half_level_u]);
        (vec![t], vec![])
    }
}

pub fn run_uniformity(bench: &Bench, p: &UniformityProtocol) -> Result<UniformityReport> {
    if p.n_dark < 100 || p.n_half < 100 {
        return Err(Error::Precondition("uniformity needs n_dark, n_half >= 100".into()));
    }
    let cfg = &bench.tianmouc;
    let sensor = Tianmouc::new(cfg, bench.grid(), 0)?;
    let full_scale = cfg.saturation_dn();

    let dark = cop_stats(&sensor, &static_cop_photons(bench, 0.0)?, p.n_dark, 0);
    let mu_dark = dark.grand_mean();
    let s2_dark = dark.spatial_variance();

    let full = mean(&static_cop_photons(bench, 1.0)?);
    let per_u = cfg.adc_gain * cfg.qe * full;
    let u_half = (0.5 * full_scale / per_u).min(1.0);
    let photons = static_cop_photons(bench, u_half)?;
    let half = cop_stats(&sensor, &photons, p.n_half, 1);
    let mu_half = half.grand_mean();
    let s2_half = half.spatial_variance();
    let fraction = (mu_half - mu_dark) / full_scale;
    if fraction >= 0.95 || half.means().iter().any(|&m| m >= cfg.max_code() as f64) {
        return Err(Error::Saturated("half-saturation level is clipped".into()));
    }
    if !(0.4..=0.6).contains(&fraction) {
        return Err(Error::Precondition(format!(
            "illumination reaches {:.1}% of saturation, needs 50% +- 10%",
            100.0 * fraction
        )));
    }
    let n = half.means().len() as f64;
    let rel = 1.96 / (2.0 * (n - 1.0)).sqrt();
    let dsnu = s2_dark.sqrt();
    let prnu = 100.0 * (s2_half - s2_dark).max(0.0).sqrt() / (mu_half - mu_dark);
    Ok(UniformityReport {
        dsnu_dn: dsnu,
        prnu_pct: prnu,
        dsnu_ci95_dn: dsnu * rel,
        prnu_ci95_pct: prnu * rel * (s2_half / (s2_half - s2_dark).max(f64::MIN_POSITIVE)),
        mu_dark_dn: mu_dark,
        mu_half_dn: mu_half,
        s2_dark,
        s2_half,
        half_level_u: u_half,
        half_fraction_of_saturation: fraction,
        n_dark: p.n_dark,
        n_half: p.n_half,
        pixels: n as usize,
    })
}

/// Split a relative illumination `v` into a source attenuation `a` (a power
/// of ten) and a DMD duty `u = v / a` in `(0.1, 1]`.
pub(crate) fn attenuate(v: f64) -> (f64, f64) {
    let a = 10f64.powf(v.log10().ceil());
    let u = (v / a).min(1.0);
    if u <= 0.1 {
        (a / 10.0, u * 10.0)
    } else {
        (a, u)
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SnrLevel {
    pub level: f64,
    pub attenuation: f64,
    pub duty: f64,
    pub photons: f64,
    pub mean_dn: f64,
    pub noise_dn: f64,
    pub snr: f64,
    pub snr_db: f64,
    pub saturated: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SnrReport {
    pub dynamic_range_db: f64,
    /// Photons per pixel per COP frame at SNR = 1.
    pub u_min_photons: f64,
    /// Photons per pixel per COP frame at saturation.
    pub u_sat_photons: f64,
    /// DN per photon.
    pub responsivity: f64,
    pub mu_sat_dn: f64,
    /// Slope of ln SNR against ln photons above the noise floor.
    pub loglog_slope: f64,
    pub frames_per_level: usize,
    pub levels: Vec<SnrLevel>,
}

impl SnrReport {
    pub fn tables(&self) -> (Vec<Table>, Vec<Curve>) {
        let mut t = Table::new(
            "levels",
            &["level", "photons", "mean_dn", "noise_dn", "snr_db", "saturated"],
        );
        let mut c = Curve::new("snr", "photons per pixel", "SNR (dB)").log_x();
        for l in &self.levels {
            t.push(&[l.level, l.photons, l.mean_dn, l.noise_dn, l.snr_db, l.saturated as u8 as f64]);
            c.push(l.photons, l.snr_db);
        }
        (vec![t], vec![c])
    }
}

pub fn run_snr_dr(bench: &Bench, p: &SnrProtocol) -> Result<SnrReport> {
    let values = p.levels.values();
    if values.len() < 20 {
        return Err(Error::Precondition("SNR sweep needs at least 20 levels".into()));
    }
    if p.frames_per_level < 2 {
        return Err(Error::Precondition("SNR needs at least 2 frames per level".into()));
    }
    if values.iter().any(|v| !(v.is_finite() && *v > 0.0)) {
        return Err(Error::invalid("protocols.snr_dr.levels", "levels must be > 0"));
    }
    let cfg = &bench.tianmouc;
    let sensor = Tianmouc::new(cfg, bench.grid(), 0)?;
    let phi = bench.optics().phi_max;
    let dark = cop_stats(&sensor, &static_cop_photons(bench, 0.0)?, p.frames_per_level, 0).grand_mean();

    let mut levels = Vec::with_capacity(values.len());
    for (i, &v) in values.iter().enumerate() {
        let (a, u) = attenuate(v);
        let b = bench.with_phi_max(phi * a)?;
        let photons = static_cop_photons(&b, u)?;
        let s = cop_stats(&sensor, &photons, p.frames_per_level, i as u64 + 1);
        let mu = s.grand_mean() - dark;
        let sigma = s.temporal_variance().sqrt();
        let snr = mu / sigma;
        levels.push(SnrLevel {
            level: v,
            attenuation: a,
            duty: u,
            photons: mean(&photons),
            mean_dn: mu,
            noise_dn: sigma,
            snr,
            snr_db: 20.0 * snr.log10(),
            saturated: false,
        });
    }
    levels.sort_by(|a, b| a.photons.total_cmp(&b.photons));

    // SNR = 1 crossing, interpolated in log-log between bracketing levels
    let crossing = levels.windows(2).find(|w| w[0].snr < 1.0 && w[1].snr >= 1.0);
    let u_min = match crossing {
        Some([a, b]) => {
            let (lx0, lx1) = (a.photons.ln(), b.photons.ln());
            if a.snr > 0.0 {
                let (ly0, ly1) = (a.snr.ln(), b.snr.ln());
                (lx0 + (0.0 - ly0) / (ly1 - ly0) * (lx1 - lx0)).exp()
            } else {
                (lx0 + (1.0 - a.snr) / (b.snr - a.snr) * (lx1 - lx0)).exp()
            }
        }
        _ => {
            return Err(Error::MetricUndefined(
                "SNR never crosses 0 dB inside the sweep".into(),
            ))
        }
    };

    let peak = levels
        .iter()
        .enumerate()
        .max_by(|a, b| a.1.noise_dn.total_cmp(&b.1.noise_dn))
        .map(|(i, l)| (i, l.noise_dn))
        .expect("levels nonempty");
    for l in levels.iter_mut().skip(peak.0 + 1) {
        l.saturated = l.noise_dn < 0.5 * peak.1;
    }
    if !levels.iter().any(|l| l.saturated) {
        return Err(Error::Precondition("sweep never reaches saturation".into()));
    }
    let mu_sat = levels.iter().map(|l| l.mean_dn).fold(f64::NEG_INFINITY, f64::max);
    let (x, y): (Vec<f64>, Vec<f64>) = levels
        .iter()
        .filter(|l| !l.saturated && l.mean_dn >= 0.05 * mu_sat && l.mean_dn <= 0.7 * mu_sat)
        .map(|l| (l.photons, l.mean_dn))
        .unzip();
    let (responsivity, _) = linear_fit(&x, &y)?;
    let u_sat = mu_sat / responsivity;

    let (lx, ly): (Vec<f64>, Vec<f64>) = levels
        .iter()
        .filter(|l| !l.saturated && l.snr > 1.0 && l.mean_dn <= 0.5 * mu_sat)
        .map(|l| (l.photons.ln(), l.snr.ln()))
        .unzip();
    let loglog_slope = linear_fit(&lx, &ly).map(|f| f.0).unwrap_or(f64::NAN);

    Ok(SnrReport {
        dynamic_range_db: 20.0 * (u_sat / u_min).log10(),
        u_min_photons: u_min,
        u_sat_photons: u_sat,
        responsivity,
        mu_sat_dn: mu_sat,
        loglog_slope,
        frames_per_level: p.frames_per_level,
        levels,
    })
}

#[derive(Clone, Debug, Serialize)]
pub struct PtcLevel {
    pub u: f64,
    pub photons: f64,
    pub mean_dn: f64,
    pub variance_dn2: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct PhotonTransferReport {
    /// DN per electron.
    pub system_gain: f64,
    pub system_gain_ci95: f64,
    /// DN per photon.
    pub responsivity: f64,
    pub responsivity_ci95: f64,
    pub qe_est: f64,
    pub frames_per_level: usize,
    pub levels: Vec<PtcLevel>,
}

impl PhotonTransferReport {
    pub fn tables(&self) -> (Vec<Table>, Vec<Curve>) {
        let mut t = Table::new("levels", &["u", "photons", "mean_dn", "variance_dn2"]);
        let mut c = Curve::new("photon_transfer", "mean (DN)", "temporal variance (DN^2)");
        for l in &self.levels {
            t.push(&[l.u, l.photons, l.mean_dn, l.variance_dn2]);
            c.push(l.mean_dn, l.variance_dn2);
        }
        (vec![t], vec![c])
    }
}

pub fn run_photon_transfer(bench: &Bench, p: &PhotonTransferProtocol) -> Result<PhotonTransferReport> {
    if p.frames_per_level < 2 {
        return Err(Error::Precondition("photon transfer needs at least 2 frames per level".into()));
    }
    let cfg = &bench.tianmouc;
    let sensor = Tianmouc::new(cfg, bench.grid(), 0)?;
    let full_scale = cfg.saturation_dn();
    let dark = cop_stats(&sensor, &static_cop_photons(bench, 0.0)?, p.frames_per_level, 0);
    let (mu_dark, var_dark) = (dark.grand_mean(), dark.temporal_variance());

    let mut levels = Vec::new();
    for (i, &u) in p.levels.iter().enumerate() {
        if !(0.0..=1.0).contains(&u) {
            return Err(Error::invalid("protocols.photon_transfer.levels", format!("{u} outside [0, 1]")));
        }
        let photons = static_cop_photons(bench, u)?;
        let photons_mean = mean(&photons);
        if photons_mean <= 0.0 {
            continue;
        }
        let s = cop_stats(&sensor, &photons, p.frames_per_level, i as u64 + 1);
        let mu = s.grand_mean() - mu_dark;
        if mu >= 0.9 * full_scale {
            continue;
        }
        levels.push(PtcLevel {
            u,
            photons: photons_mean,
            mean_dn: mu,
            variance_dn2: s.temporal_variance() - var_dark,
        });
    }
    if levels.len() < 3 {
        return Err(Error::Precondition(
            "photon transfer needs at least 3 illuminated, unsaturated levels".into(),
        ));
    }
    let mean_dn: Vec<f64> = levels.iter().map(|l| l.mean_dn).collect();
    let var: Vec<f64> = levels.iter().map(|l| l.variance_dn2).collect();
    let photons: Vec<f64> = levels.iter().map(|l| l.photons).collect();
    let (k, k0) = linear_fit(&mean_dn, &var)?;
    let (r, r0) = linear_fit(&photons, &mean_dn)?;
    if k <= 0.0 {
        return Err(Error::MetricUndefined("variance does not grow with the mean".into()));
    }
    Ok(PhotonTransferReport {
        system_gain: k,
        system_gain_ci95: 1.96 * slope_stderr(&mean_dn, &var, k, k0),
        responsivity: r,
        responsivity_ci95: 1.96 * slope_stderr(&photons, &mean_dn, r, r0),
        qe_est: r / k,
        frames_per_level: p.frames_per_level,
        levels,
    })
}
