use serde::{Deserialize, Serialize};

use crate::device::GainTable;

use super::AnalyticsError;

/// Linear map `counts = slope · ppm + intercept` at a reference gain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationCurve {
    pub slope_counts_per_ppm: f64,
    pub intercept_counts: f64,
    pub ref_gain_index: u8,
    pub fit_r2: f64,
}

impl CalibrationCurve {
    /// The line through two (counts, ppm) pairs.
    pub fn through(a: (f64, f64), b: (f64, f64), ref_gain_index: u8) -> Result<Self, AnalyticsError> {
        fit_calibration(&[(a.1, a.0), (b.1, b.0)], ref_gain_index)
    }

    pub fn counts_at(&self, ppm: f64) -> f64 {
        self.slope_counts_per_ppm * ppm + self.intercept_counts
    }

    /// Inverse of the line for counts already at the reference gain.
    pub fn ppm_at(&self, counts: f64) -> f64 {
        (counts - self.intercept_counts) / self.slope_counts_per_ppm
    }
}

/// Ordinary least squares over `(known_ppm, mean_counts)` pairs.
pub fn fit_calibration(points: &[(f64, f64)], ref_gain_index: u8) -> Result<CalibrationCurve, AnalyticsError> {
    if points.iter().any(|(x, y)| !x.is_finite() || !y.is_finite()) {
        return Err(AnalyticsError::InvalidSeries("non-finite calibration point".into()));
    }
    let n = points.len() as f64;
    let mut xs: Vec<f64> = points.iter().map(|p| p.0).collect();
    xs.sort_by(f64::total_cmp);
    xs.dedup();
    if xs.len() < 2 {
        return Err(AnalyticsError::DegenerateFit(format!(
            "need at least 2 distinct concentrations, got {}",
            xs.len()
        )));
    }
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    if !(slope > 0.0) {
        return Err(AnalyticsError::DegenerateFit(format!("non-positive slope {slope}")));
    }
    let ss_res: f64 = points.iter().map(|p| (p.1 - (slope * p.0 + intercept)).powi(2)).sum();
    let r2 = if syy > 0.0 { (1.0 - ss_res / syy).clamp(0.0, 1.0) } else { 1.0 };
    Ok(CalibrationCurve { slope_counts_per_ppm: slope, intercept_counts: intercept, ref_gain_index, fit_r2: r2 })
}

/// Counts read at `gain_index` -> ppm, via the reference gain.
pub fn adc_to_ppm(counts: f64, gain_index: u8, cal: &CalibrationCurve, table: &GainTable) -> Result<f64, AnalyticsError> {
    let norm = table
        .normalize(counts, gain_index, cal.ref_gain_index)
        .ok_or(AnalyticsError::UnknownGain(gain_index.max(cal.ref_gain_index)))?;
    Ok(cal.ppm_at(norm))
}
