//! Small estimators shared by the protocols.

use crate::error::{Error, Result};

pub fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

/// Unbiased sample variance.
pub fn variance(v: &[f64]) -> f64 {
    let m = mean(v);
    v.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (v.len() as f64 - 1.0)
}

/// Ordinary least squares `y = slope * x + intercept`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::Precondition("a line fit needs at least two points".into()));
    }
    let mx = mean(x);
    let my = mean(y);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    if sxx == 0.0 {
        return Err(Error::Precondition("fit abscissae are all equal".into()));
    }
    let slope = sxy / sxx;
    Ok((slope, my - slope * mx))
}

/// Standard error of the OLS slope.
pub fn slope_stderr(x: &[f64], y: &[f64], slope: f64, intercept: f64) -> f64 {
    let n = x.len() as f64;
    if n <= 2.0 {
        return f64::NAN;
    }
    let mx = mean(x);
    let sxx: f64 = x.iter().map(|a| (a - mx).powi(2)).sum();
    let sse: f64 = x.iter().zip(y).map(|(a, b)| (b - slope * a - intercept).powi(2)).sum();
    (sse / (n - 2.0) / sxx).sqrt()
}

pub fn median(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        0.5 * (s[n / 2 - 1] + s[n / 2])
    }
}

/// Half-width of the distribution-free 95% interval for the median, from
/// the order statistics at `n/2 -+ 0.98 sqrt(n)`.
pub fn median_ci_half_width(v: &[f64]) -> f64 {
    let mut s = v.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len() as f64;
    if s.len() < 2 {
        return f64::NAN;
    }
    let lo = (n / 2.0 - 0.98 * n.sqrt()).floor().max(0.0) as usize;
    let hi = ((n / 2.0 + 0.98 * n.sqrt()).ceil() as usize).min(s.len() - 1);
    0.5 * (s[hi] - s[lo])
}

/// Per-pixel running mean and variance over frames (Welford).
#[derive(Clone, Debug)]
pub struct PixelStats {
    n: usize,
    mean: Vec<f64>,
    m2: Vec<f64>,
}

impl PixelStats {
    pub fn new(pixels: usize) -> Self {
        Self {
            n: 0,
            mean: vec![0.0; pixels],
            m2: vec![0.0; pixels],
        }
    }

    pub fn push<T: Copy + Into<f64>>(&mut self, frame: &[T]) {
        self.n += 1;
        let n = self.n as f64;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(frame) {
            let v: f64 = v.into();
            let d = v - *m;
            *m += d / n;
            *s += d * (v - *m);
        }
    }

    pub fn frames(&self) -> usize {
        self.n
    }

    /// Time-averaged frame.
    pub fn means(&self) -> &[f64] {
        &self.mean
    }

    /// Spatial mean of the time-averaged frame.
    pub fn grand_mean(&self) -> f64 {
        mean(&self.mean)
    }

    /// Spatial variance of the time-averaged frame.
    pub fn spatial_variance(&self) -> f64 {
        variance(&self.mean)
    }

    /// Temporal variance averaged over pixels.
    pub fn temporal_variance(&self) -> f64 {
        if self.n < 2 {
            return f64::NAN;
        }
        mean(&self.m2) / (self.n as f64 - 1.0)
    }
}
