//! Per-window motion features: RSS ratio/std, a time-frequency Motion
//! Indicator, and the per-antenna short-term phase variance ratio.
//!
//! All operations are pure functions of window contents; absolute frame
//! indices never enter a formula, so shifting a corpus in time leaves every
//! feature unchanged.

use nalgebra::DMatrix;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// The feature record emitted once per window stride.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FeatureVector {
    /// Window index.
    pub t: u64,
    /// Strongest tracked AoA; absent when the spectrum was underresolved.
    pub aoa1_deg: Option<f64>,
    /// Second tracked AoA.
    pub aoa2_deg: Option<f64>,
    pub rss_ratio: f64,
    pub rss_std_db: f64,
    pub rss_mean_db: f64,
    /// In [0, 1]; higher means more motion.
    pub motion_indicator: f64,
    /// Per-antenna phase variance ratios, length `M_R`.
    pub svr: Vec<f64>,
    pub label: Option<bool>,
}

impl FeatureVector {
    pub fn validate(&self) -> Result<()> {
        let scalars = [
            self.rss_ratio,
            self.rss_std_db,
            self.rss_mean_db,
            self.motion_indicator,
        ];
        if scalars.iter().any(|v| !v.is_finite())
            || self.svr.iter().any(|v| !v.is_finite())
            || self.aoa1_deg.is_some_and(|v| !v.is_finite())
            || self.aoa2_deg.is_some_and(|v| !v.is_finite())
        {
            return Err(Error::Data(format!("window {}: non-finite feature", self.t)));
        }
        if !(0.0..=1.0).contains(&self.motion_indicator) {
            return Err(Error::Data(format!(
                "window {}: motion indicator {} outside [0, 1]",
                self.t, self.motion_indicator
            )));
        }
        if self.rss_std_db < 0.0 {
            return Err(Error::Data(format!("window {}: negative rss std", self.t)));
        }
        Ok(())
    }
}

const RSS_GUARD: f64 = 1e-9;

/// Sum of adjacent-frame RSS ratios over the window,
/// `sum_i RSSI(i) / RSSI(i-1)`. The slice covers frames `t-T-1 ..= t`, so
/// `T+2` samples yield `T+1` ratio terms. Values are divided as given (dB
/// domain); `linear` converts to milliwatts first.
pub fn rss_ratio(rss_db: &[f64], linear: bool) -> Result<f64> {
    if rss_db.len() < 3 {
        return Err(Error::Precondition(format!(
            "rss ratio needs at least 3 samples, got {}",
            rss_db.len()
        )));
    }
    if rss_db.iter().any(|v| !v.is_finite()) {
        return Err(Error::Data("non-finite RSS sample".into()));
    }
    let vals: Vec<f64> = if linear {
        rss_db.iter().map(|d| 10f64.powf(d / 10.0)).collect()
    } else {
        rss_db.to_vec()
    };
    if let Some(v) = vals.iter().find(|v| v.abs() <= RSS_GUARD) {
        return Err(Error::DegenerateSample(format!(
            "RSS sample {v} within {RSS_GUARD} of zero"
        )));
    }
    Ok(vals.windows(2).map(|w| w[1] / w[0]).sum())
}

/// Sample standard deviation (denominator `n - 1`) of the window RSS.
pub fn rss_std(rss_db: &[f64]) -> Result<f64> {
    if rss_db.len() < 2 {
        return Err(Error::Precondition(format!(
            "rss std needs at least 2 samples, got {}",
            rss_db.len()
        )));
    }
    let n = rss_db.len() as f64;
    let mean = rss_db.iter().sum::<f64>() / n;
    let ss: f64 = rss_db.iter().map(|v| (v - mean) * (v - mean)).sum();
    Ok((ss / (n - 1.0)).sqrt())
}

pub fn rss_mean(rss_db: &[f64]) -> Result<f64> {
    if rss_db.is_empty() {
        return Err(Error::Precondition("rss mean needs at least 1 sample".into()));
    }
    Ok(rss_db.iter().sum::<f64>() / rss_db.len() as f64)
}

/// Pearson correlation; `None` when either series has exactly zero
/// variance (constant input), which callers treat as a skipped term.
fn pearson(x: &[f64], y: &[f64]) -> Option<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    let mut sxy = 0.0;
    for (a, b) in x.iter().zip(y) {
        sxx += (a - mx) * (a - mx);
        syy += (b - my) * (b - my);
        sxy += (a - mx) * (b - my);
    }
    if sxx == 0.0 || syy == 0.0 {
        return None;
    }
    Some(sxy / (sxx * syy).sqrt())
}

/// Motion Indicator from amplitude correlation.
///
/// `rho_time` averages, over antenna-subcarrier cells, the correlation
/// between the two windows' amplitude time series; `rho_freq` averages,
/// over antennas and frames of `window_b`, the correlation between
/// adjacent-subcarrier amplitude series. Constant series are skipped; a
/// pool with no surviving terms is excluded from the min, and
/// `MI = 1 - clamp(min(rho_time, rho_freq), 0, 1)`.
pub fn motion_indicator(window_a: &[DMatrix<f64>], window_b: &[DMatrix<f64>]) -> Result<f64> {
    if window_a.len() != window_b.len() || window_a.len() < 2 {
        return Err(Error::Precondition(format!(
            "motion indicator needs two equal windows of >= 2 frames, got {} and {}",
            window_a.len(),
            window_b.len()
        )));
    }
    let shape = window_a[0].shape();
    if window_a
        .iter()
        .chain(window_b)
        .any(|f| f.shape() != shape)
    {
        return Err(Error::Data("motion indicator windows have mismatched shapes".into()));
    }
    let (rows, cols) = shape;
    if cols < 2 {
        return Err(Error::Precondition("motion indicator needs >= 2 subcarriers".into()));
    }

    let mut time_sum = 0.0;
    let mut time_n = 0usize;
    for m in 0..rows {
        for s in 0..cols {
            let x: Vec<f64> = window_a.iter().map(|f| f[(m, s)]).collect();
            let y: Vec<f64> = window_b.iter().map(|f| f[(m, s)]).collect();
            if let Some(r) = pearson(&x, &y) {
                time_sum += r;
                time_n += 1;
            }
        }
    }

    let mut freq_sum = 0.0;
    let mut freq_n = 0usize;
    for f in window_b {
        for m in 0..rows {
            let x: Vec<f64> = (0..cols - 1).map(|s| f[(m, s)]).collect();
            let y: Vec<f64> = (1..cols).map(|s| f[(m, s)]).collect();
            if let Some(r) = pearson(&x, &y) {
                freq_sum += r;
                freq_n += 1;
            }
        }
    }

    let rho = match (time_n, freq_n) {
        (0, 0) => {
            return Err(Error::DegenerateSample(
                "all correlation terms were constant series".into(),
            ))
        }
        (0, _) => freq_sum / freq_n as f64,
        (_, 0) => time_sum / time_n as f64,
        (_, _) => (time_sum / time_n as f64).min(freq_sum / freq_n as f64),
    };
    Ok(1.0 - rho.clamp(0.0, 1.0))
}

const SVR_GUARD: f64 = 1e-12;

/// Per-antenna short-term variance ratio of sanitized phase:
///
/// ```text
/// SVR_m = mean_s  [ std_next(m,s) / std_prev(m,s) ]
///               * [ sum_next(m,s) / sum_prev(m,s) ]
/// ```
///
/// with `prev` the trailing window `[t-T, t]` and `next` the leading window
/// `[t, t+T]`, both `T+1` frames. Terms whose trailing std or |sum| falls
/// under the guard are skipped and the mean renormalized; an antenna with
/// no surviving terms is a degenerate sample.
pub fn phase_svr(prev: &[DMatrix<f64>], next: &[DMatrix<f64>]) -> Result<Vec<f64>> {
    if prev.len() != next.len() || prev.len() < 2 {
        return Err(Error::Precondition(format!(
            "phase SVR needs two equal windows of >= 2 frames, got {} and {}",
            prev.len(),
            next.len()
        )));
    }
    let shape = prev[0].shape();
    if prev.iter().chain(next).any(|f| f.shape() != shape) {
        return Err(Error::Data("phase SVR windows have mismatched shapes".into()));
    }
    let (rows, cols) = shape;
    let series_stats = |win: &[DMatrix<f64>], m: usize, s: usize| {
        let vals: Vec<f64> = win.iter().map(|f| f[(m, s)]).collect();
        let n = vals.len() as f64;
        let sum: f64 = vals.iter().sum();
        let mean = sum / n;
        let ss: f64 = vals.iter().map(|v| (v - mean) * (v - mean)).sum();
        ((ss / (n - 1.0)).sqrt(), sum)
    };
    let mut out = Vec::with_capacity(rows);
    for m in 0..rows {
        let mut total = 0.0;
        let mut kept = 0usize;
        for s in 0..cols {
            let (std_prev, sum_prev) = series_stats(prev, m, s);
            if std_prev <= SVR_GUARD || sum_prev.abs() <= SVR_GUARD {
                continue;
            }
            let (std_next, sum_next) = series_stats(next, m, s);
            total += (std_next / std_prev) * (sum_next / sum_prev);
            kept += 1;
        }
        if kept == 0 {
            return Err(Error::DegenerateSample(format!(
                "antenna {m}: every subcarrier failed the SVR guard"
            )));
        }
        out.push(total / kept as f64);
    }
    Ok(out)
}
