//! Calibration, ADC-to-ppm conversion, baseline removal and session metrics.
//! Series are parallel `(t_s, value)` slices sorted by time.

mod baseline;
mod calibration;
mod metrics;

pub use baseline::{baseline_stats, fit_quadratic, remove_baseline, BaselineStats, QuadraticBaseline};
pub use calibration::{adc_to_ppm, fit_calibration, CalibrationCurve};
pub use metrics::{auc, auc_ratio, peak, peak_delay, session_metrics, SessionMetrics};

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticsError {
    #[error("degenerate fit: {0}")]
    DegenerateFit(String),
    #[error("gain index {0} is not in the gain table")]
    UnknownGain(u8),
    #[error("fit window holds {0} samples; at least 3 are needed")]
    WindowTooShort(usize),
    #[error("ratio undefined: denominator area is zero")]
    UndefinedRatio,
    #[error("series has no positive peak")]
    NoPeak,
    #[error("invalid series: {0}")]
    InvalidSeries(String),
}

pub(crate) fn check_series(t_s: &[f64], values: &[f64]) -> Result<(), AnalyticsError> {
    if t_s.len() != values.len() {
        return Err(AnalyticsError::InvalidSeries(format!(
            "{} times but {} values",
            t_s.len(),
            values.len()
        )));
    }
    if t_s.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(AnalyticsError::InvalidSeries("times must be strictly increasing".into()));
    }
    Ok(())
}
