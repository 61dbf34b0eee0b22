//! Turns stored minute records and breathalyzer readings into TACg series
//! and session metrics.

use std::collections::BTreeMap;
use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::{
    adc_to_ppm, auc, auc_ratio, baseline_stats, peak, remove_baseline, AnalyticsError, BaselineStats, CalibrationCurve,
};
use crate::clock::NS_PER_S;
use crate::device::GainTable;
use crate::physio::SessionTrace;
use crate::schema::PointRecord;

use super::HarnessError;

/// Simulated breath test: ground-truth BAC plus uniform error, clamped at 0.
/// Readings start at `first_s` every `interval_s` and stop after the first
/// reading taken once true BAC has returned to zero.
pub fn breathalyzer(
    trace: &SessionTrace,
    first_s: f64,
    interval_s: u64,
    noise_mg_dl: f64,
    seed: u64,
) -> Vec<(f64, f64)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::new();
    if interval_s == 0 || trace.rows.is_empty() {
        return out;
    }
    let mut t = first_s.max(0.0) as usize;
    let mut seen_alcohol = false;
    while let Some(row) = trace.rows.get(t) {
        let err = if noise_mg_dl > 0.0 { rng.gen_range(-noise_mg_dl..=noise_mg_dl) } else { 0.0 };
        out.push((row.t_s, (row.bac_mg_dl + err).max(0.0)));
        if row.bac_mg_dl > 0.0 {
            seen_alcohol = true;
        } else if seen_alcohol {
            break;
        }
        t += interval_s as usize;
    }
    out
}

/// One arm's alcohol signal on the minute grid.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct TacgSeries {
    pub t_s: Vec<f64>,
    /// Reference-gain counts as stored.
    pub counts: Vec<f64>,
    pub raw_ppm: Vec<f64>,
    pub corrected_ppm: Vec<f64>,
    pub temp_c: Vec<f64>,
    pub rh_pct: Vec<f64>,
}

impl TacgSeries {
    pub const CSV_HEADER: &'static str = "t_s,counts,raw_ppm,corrected_ppm,temp_C,rh_pct";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for i in 0..self.t_s.len() {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                self.t_s[i], self.counts[i], self.raw_ppm[i], self.corrected_ppm[i], self.temp_c[i], self.rh_pct[i]
            )?;
        }
        Ok(())
    }

    pub fn read_csv(text: &str) -> Result<Self, HarnessError> {
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        let mut s = Self::default();
        for row in rdr.deserialize::<(f64, f64, f64, f64, f64, f64)>() {
            let r = row.map_err(|e| HarnessError::Validation(format!("TACg CSV: {e}")))?;
            s.t_s.push(r.0);
            s.counts.push(r.1);
            s.raw_ppm.push(r.2);
            s.corrected_ppm.push(r.3);
            s.temp_c.push(r.4);
            s.rh_pct.push(r.5);
        }
        Ok(s)
    }
}

/// Converts stored points (already at `stored_gain_index`) to ppm and removes
/// the quadratic drift fitted over `baseline_windows_s`. Times are seconds
/// after `t0_ns`.
pub fn tacg_series(
    points: &[PointRecord],
    t0_ns: i64,
    stored_gain_index: u8,
    cal: &CalibrationCurve,
    table: &GainTable,
    baseline_windows_s: &[(f64, f64)],
) -> Result<TacgSeries, AnalyticsError> {
    let mut s = TacgSeries::default();
    for p in points {
        s.t_s.push((p.t_ns - t0_ns) as f64 / NS_PER_S as f64);
        s.counts.push(p.alcohol_raw);
        s.raw_ppm.push(adc_to_ppm(p.alcohol_raw, stored_gain_index, cal, table)?);
        s.temp_c.push(p.temp_c);
        s.rh_pct.push(p.rh_pct);
    }
    s.corrected_ppm = remove_baseline(&s.t_s, &s.raw_ppm, baseline_windows_s)?;
    Ok(s)
}

/// Area, peak and peak time; peak fields are absent when the series never
/// rises above zero.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesSummary {
    pub auc: f64,
    pub peak_value: Option<f64>,
    pub peak_time_s: Option<f64>,
}

fn summarize(t: &[f64], v: &[f64], from_s: f64, to_s: f64) -> Result<SeriesSummary, AnalyticsError> {
    let area = auc(t, v, from_s, to_s)?;
    let pk = match peak(t, v) {
        Ok(p) => Some(p),
        Err(AnalyticsError::NoPeak) => None,
        Err(e) => return Err(e),
    };
    Ok(SeriesSummary { auc: area, peak_value: pk.map(|p| p.1), peak_time_s: pk.map(|p| p.0) })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArmMetrics {
    pub name: String,
    pub device: String,
    /// Window the areas are taken over, seconds from session start.
    pub auc_window_s: (f64, f64),
    /// Breathalyzer BAC; area in mg/dL·min.
    pub bac: Option<SeriesSummary>,
    /// Calibrated TACg before drift removal; area in ppm·min.
    pub tacg_raw: SeriesSummary,
    /// Calibrated TACg after drift removal; area in ppm·min.
    pub tacg_corrected: SeriesSummary,
    /// Corrected TACg peak time minus BAC peak time.
    pub peak_delay_s: Option<f64>,
    pub baseline_windows_s: Vec<(f64, f64)>,
    /// RMS of the raw and corrected TACg inside the baseline windows.
    pub window_rms_raw_ppm: f64,
    pub window_rms_corrected_ppm: f64,
    /// Off-body baseline of the counts (1 Hz stream when available), when
    /// an off-body window exists.
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub off_body_baseline: Option<BaselineStats>,
}

pub struct ArmInput<'a> {
    pub name: &'a str,
    pub device: &'a str,
    pub tacg: &'a TacgSeries,
    pub bac: &'a [(f64, f64)],
    pub auc_window_s: (f64, f64),
    pub baseline_windows_s: &'a [(f64, f64)],
    pub off_body_window_s: Option<(f64, f64)>,
    /// Reference-gain counts at 1 Hz (times, counts), for off-body noise.
    pub realtime: Option<(&'a [f64], &'a [f64])>,
    pub cal: &'a CalibrationCurve,
}

fn window_rms(t: &[f64], v: &[f64], windows: &[(f64, f64)]) -> f64 {
    let sel: Vec<f64> = t
        .iter()
        .zip(v)
        .filter(|(t, _)| windows.iter().any(|(a, b)| **t >= *a && **t <= *b))
        .map(|(_, v)| *v)
        .collect();
    if sel.is_empty() {
        return 0.0;
    }
    (sel.iter().map(|x| x * x).sum::<f64>() / sel.len() as f64).sqrt()
}

pub fn arm_metrics(input: &ArmInput) -> Result<ArmMetrics, AnalyticsError> {
    let (a, b) = input.auc_window_s;
    let s = input.tacg;
    let bac = if input.bac.is_empty() {
        None
    } else {
        let (t, v): (Vec<f64>, Vec<f64>) = input.bac.iter().copied().unzip();
        Some(summarize(&t, &v, a, b)?)
    };
    let tacg_raw = summarize(&s.t_s, &s.raw_ppm, a, b)?;
    let tacg_corrected = summarize(&s.t_s, &s.corrected_ppm, a, b)?;
    let peak_delay_s = match (bac.and_then(|x| x.peak_time_s), tacg_corrected.peak_time_s) {
        (Some(tb), Some(tt)) => Some(tt - tb),
        _ => None,
    };
    let (bt, bc) = input.realtime.unwrap_or((&s.t_s, &s.counts));
    let off_body_baseline = input.off_body_window_s.map(|w| baseline_stats(bt, bc, w, input.cal)).transpose()?;
    Ok(ArmMetrics {
        name: input.name.to_string(),
        device: input.device.to_string(),
        auc_window_s: input.auc_window_s,
        bac,
        tacg_raw,
        tacg_corrected,
        peak_delay_s,
        baseline_windows_s: input.baseline_windows_s.to_vec(),
        window_rms_raw_ppm: window_rms(&s.t_s, &s.raw_ppm, input.baseline_windows_s),
        window_rms_corrected_ppm: window_rms(&s.t_s, &s.corrected_ppm, input.baseline_windows_s),
        off_body_baseline,
    })
}

/// Ratios of arm `a` to arm `b`; a ratio with a zero denominator is absent.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub a: String,
    pub b: String,
    pub bac_auc_ratio: Option<f64>,
    pub tacg_auc_ratio_raw: Option<f64>,
    pub tacg_auc_ratio_corrected: Option<f64>,
}

pub fn compare(a: &ArmMetrics, b: &ArmMetrics) -> Comparison {
    let r = |x: Option<f64>, y: Option<f64>| x.zip(y).and_then(|(x, y)| auc_ratio(x, y).ok());
    Comparison {
        a: a.name.clone(),
        b: b.name.clone(),
        bac_auc_ratio: r(a.bac.map(|s| s.auc), b.bac.map(|s| s.auc)),
        tacg_auc_ratio_raw: r(Some(a.tacg_raw.auc), Some(b.tacg_raw.auc)),
        tacg_auc_ratio_corrected: r(Some(a.tacg_corrected.auc), Some(b.tacg_corrected.auc)),
    }
}

pub const METRICS_SCHEMA_VERSION: u32 = 1;

/// Top-level `metrics.json`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub schema_version: u32,
    pub scenario: String,
    pub seed: u64,
    pub calibration: CalibrationCurve,
    pub arms: Vec<ArmMetrics>,
    pub comparisons: Vec<Comparison>,
    /// Per-device pipeline reconciliation.
    #[serde(default)]
    pub integrity: BTreeMap<String, super::pipeline::Integrity>,
}

impl MetricsReport {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("metrics serialize") + "\n"
    }

    pub fn arm(&self, name: &str) -> Option<&ArmMetrics> {
        self.arms.iter().find(|a| a.name == name)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::physio::TraceRow;

    fn trace(bac: impl Fn(f64) -> f64, secs: usize) -> SessionTrace {
        SessionTrace {
            rows: (0..secs)
                .map(|t| TraceRow {
                    t_s: t as f64,
                    bac_mg_dl: bac(t as f64),
                    sweat_mg_dl: 0.0,
                    chamber_ppm: 0.0,
                    rh_pct: 0.0,
                    temp_c: 0.0,
                    current_na: 0.0,
                })
                .collect(),
        }
    }

    #[test]
    fn breath_tests_stop_after_return_to_zero() {
        let tr = trace(|t| if (1000.0..4000.0).contains(&t) { 20.0 } else { 0.0 }, 10_000);
        let r = breathalyzer(&tr, 1000.0, 300, 0.0, 1);
        assert_eq!(r.first(), Some(&(1000.0, 20.0)));
        assert_eq!(r.last(), Some(&(4000.0, 0.0)));
        assert_eq!(r.len(), 11);
        let noisy = breathalyzer(&tr, 1000.0, 300, 2.0, 1);
        assert!(noisy.iter().zip(&r).all(|(n, c)| (n.1 - c.1).abs() <= 2.0 && n.1 >= 0.0));
        assert_eq!(noisy, breathalyzer(&tr, 1000.0, 300, 2.0, 1));
    }

    #[test]
    fn metrics_for_a_triangle() {
        let cal = CalibrationCurve { slope_counts_per_ppm: 1.0, intercept_counts: 0.0, ref_gain_index: 7, fit_r2: 1.0 };
        let t: Vec<f64> = (0..11).map(|i| i as f64 * 60.0).collect();
        let v: Vec<f64> = (0..11).map(|i| 5.0 - (i as f64 - 5.0f64).abs()).collect();
        let s = TacgSeries {
            t_s: t.clone(),
            counts: v.clone(),
            raw_ppm: v.clone(),
            corrected_ppm: v.clone(),
            temp_c: vec![0.0; 11],
            rh_pct: vec![0.0; 11],
        };
        let bac = vec![(0.0, 0.0), (120.0, 10.0), (240.0, 0.0)];
        let m = arm_metrics(&ArmInput {
            name: "a",
            device: "D",
            tacg: &s,
            bac: &bac,
            auc_window_s: (0.0, 600.0),
            baseline_windows_s: &[],
            off_body_window_s: None,
            realtime: None,
            cal: &cal,
        })
        .unwrap();
        // triangle of base 10 min, height 5
        assert!((m.tacg_corrected.auc - 25.0).abs() < 1e-12);
        assert_eq!(m.peak_delay_s, Some(300.0 - 120.0));
        let c = compare(&m, &m);
        assert_eq!(c.tacg_auc_ratio_corrected, Some(1.0));
    }
}
