use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::calibration::CalibrationCurve;
use super::{check_series, AnalyticsError};

/// `c0 + c1·x + c2·x²` with `x = (t − center) / scale`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct QuadraticBaseline {
    pub coeffs: [f64; 3],
    pub center_s: f64,
    pub scale_s: f64,
}

impl QuadraticBaseline {
    pub fn eval(&self, t_s: f64) -> f64 {
        let x = (t_s - self.center_s) / self.scale_s;
        self.coeffs[0] + x * (self.coeffs[1] + x * self.coeffs[2])
    }
}

fn in_windows(t: f64, windows: &[(f64, f64)]) -> bool {
    windows.iter().any(|&(a, b)| t >= a && t <= b)
}

/// Least-squares quadratic through the samples inside `windows` (inclusive).
pub fn fit_quadratic(t_s: &[f64], values: &[f64], windows: &[(f64, f64)]) -> Result<QuadraticBaseline, AnalyticsError> {
    check_series(t_s, values)?;
    let (ts, vs): (Vec<f64>, Vec<f64>) = t_s
        .iter()
        .zip(values)
        .filter(|(t, _)| in_windows(**t, windows))
        .map(|(t, v)| (*t, *v))
        .unzip();
    if ts.len() < 3 {
        return Err(AnalyticsError::WindowTooShort(ts.len()));
    }
    let lo = ts[0];
    let hi = ts[ts.len() - 1];
    let center = 0.5 * (lo + hi);
    let scale = (0.5 * (hi - lo)).max(1.0);
    let a = DMatrix::from_fn(ts.len(), 3, |i, j| ((ts[i] - center) / scale).powi(j as i32));
    let b = DVector::from_vec(vs);
    let svd = a.svd(true, true);
    if svd.rank(1e-10) < 3 {
        return Err(AnalyticsError::WindowTooShort(ts.len()));
    }
    let c = svd.solve(&b, 1e-12).map_err(|e| AnalyticsError::DegenerateFit(e.to_string()))?;
    Ok(QuadraticBaseline { coeffs: [c[0], c[1], c[2]], center_s: center, scale_s: scale })
}

/// Fits the quadratic over `windows` (alcohol-free spans) and subtracts it
/// from the whole series. Negative results are kept.
pub fn remove_baseline(t_s: &[f64], values: &[f64], windows: &[(f64, f64)]) -> Result<Vec<f64>, AnalyticsError> {
    let q = fit_quadratic(t_s, values, windows)?;
    Ok(t_s.iter().zip(values).map(|(t, v)| v - q.eval(*t)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BaselineStats {
    pub mean_counts: f64,
    pub sd_counts: f64,
    pub mean_ppm: f64,
    pub sd_ppm: f64,
    pub window_s: (f64, f64),
}

/// Mean and sample SD of reference-gain counts over `window`, in counts and ppm.
pub fn baseline_stats(
    t_s: &[f64],
    counts: &[f64],
    window_s: (f64, f64),
    cal: &CalibrationCurve,
) -> Result<BaselineStats, AnalyticsError> {
    check_series(t_s, counts)?;
    let sel: Vec<f64> = t_s
        .iter()
        .zip(counts)
        .filter(|(t, _)| **t >= window_s.0 && **t <= window_s.1)
        .map(|(_, c)| *c)
        .collect();
    if sel.len() < 2 {
        return Err(AnalyticsError::WindowTooShort(sel.len()));
    }
    let n = sel.len() as f64;
    let mean = sel.iter().sum::<f64>() / n;
    let sd = (sel.iter().map(|c| (c - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    Ok(BaselineStats {
        mean_counts: mean,
        sd_counts: sd,
        mean_ppm: cal.ppm_at(mean),
        sd_ppm: sd / cal.slope_counts_per_ppm,
        window_s,
    })
}
