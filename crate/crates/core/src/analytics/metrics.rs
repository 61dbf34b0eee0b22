use serde::{Deserialize, Serialize};

use super::{check_series, AnalyticsError};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SessionMetrics {
    pub auc_ppm_min: f64,
    pub peak_value: f64,
    pub peak_time_s: f64,
}

/// Trapezoidal area over the samples with `t0 <= t <= t1`, in value·minutes.
pub fn auc(t_s: &[f64], values: &[f64], t0: f64, t1: f64) -> Result<f64, AnalyticsError> {
    check_series(t_s, values)?;
    let sel: Vec<(f64, f64)> = t_s
        .iter()
        .zip(values)
        .filter(|(t, _)| **t >= t0 && **t <= t1)
        .map(|(t, v)| (*t, *v))
        .collect();
    Ok(sel.windows(2).map(|w| 0.5 * (w[0].1 + w[1].1) * (w[1].0 - w[0].0) / 60.0).sum())
}

pub fn auc_ratio(a: f64, b: f64) -> Result<f64, AnalyticsError> {
    if b == 0.0 || !b.is_finite() || !a.is_finite() {
        return Err(AnalyticsError::UndefinedRatio);
    }
    Ok(a / b)
}

/// Earliest time of the maximum.
pub fn peak(t_s: &[f64], values: &[f64]) -> Result<(f64, f64), AnalyticsError> {
    check_series(t_s, values)?;
    let mut best: Option<(f64, f64)> = None;
    for (t, v) in t_s.iter().zip(values) {
        if best.is_none_or(|(_, bv)| *v > bv) {
            best = Some((*t, *v));
        }
    }
    match best {
        Some((t, v)) if v > 0.0 => Ok((t, v)),
        _ => Err(AnalyticsError::NoPeak),
    }
}

/// `argmax(tac) − argmax(bac)` in seconds.
pub fn peak_delay(bac: (&[f64], &[f64]), tac: (&[f64], &[f64])) -> Result<f64, AnalyticsError> {
    let (tb, _) = peak(bac.0, bac.1)?;
    let (tt, _) = peak(tac.0, tac.1)?;
    Ok(tt - tb)
}

pub fn session_metrics(t_s: &[f64], values: &[f64]) -> Result<SessionMetrics, AnalyticsError> {
    let (peak_time_s, peak_value) = peak(t_s, values)?;
    let area = auc(t_s, values, f64::NEG_INFINITY, f64::INFINITY)?;
    Ok(SessionMetrics { auc_ppm_min: area, peak_value, peak_time_s })
}
