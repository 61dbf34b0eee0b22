//! Jar calibration run through a device emulator.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::analytics::{fit_calibration, CalibrationCurve};
use crate::device::{AnalogInput, DeviceConfig, Emulator, FlashRecord};
use crate::physio::{simulate_jar, JarConfig, TraceRow};

use super::config::{CalibrationRoutine, SensorModel};
use super::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JarResult {
    pub w_v_percent: f64,
    pub liquid_mg_dl: f64,
    pub equilibrium_ppm: f64,
    pub mean_counts: f64,
    /// Seconds after insertion that were averaged.
    pub window_s: (u64, u64),
    pub extensions: u32,
    pub plateau_ok: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CalibrationReport {
    pub curve: CalibrationCurve,
    /// Slope implied by the sensor model, counts/ppm at the reference gain.
    pub model_slope_counts_per_ppm: f64,
    pub model_intercept_counts: f64,
    pub jars: Vec<JarResult>,
    pub warnings: Vec<String>,
}

impl CalibrationReport {
    pub fn slope_error(&self) -> f64 {
        (self.curve.slope_counts_per_ppm - self.model_slope_counts_per_ppm) / self.model_slope_counts_per_ppm
    }
}

/// Minute records fully inside `[w0, w1)` seconds of a segment that started
/// at record index 0.
fn window_values(recs: &[FlashRecord], w0: u64, w1: u64) -> Vec<f64> {
    recs.iter()
        .enumerate()
        .filter(|(i, _)| (*i as u64) * 60 >= w0 && (*i as u64 + 1) * 60 <= w1)
        .map(|(_, r)| f64::from(r.v1))
        .collect()
}

fn plateaued(values: &[f64], tolerance: f64) -> bool {
    if values.len() < 3 {
        return false;
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    // least-squares slope over record index
    let mx = (n - 1.0) / 2.0;
    let sxx: f64 = (0..values.len()).map(|i| (i as f64 - mx).powi(2)).sum();
    let slope: f64 = values.iter().enumerate().map(|(i, v)| (i as f64 - mx) * (v - mean)).sum::<f64>() / sxx;
    let resid: f64 = values.iter().enumerate().map(|(i, v)| (v - mean - slope * (i as f64 - mx)).powi(2)).sum();
    let se = (resid / (n - 2.0).max(1.0) / sxx).sqrt();
    let drift = (slope * (n - 1.0)).abs();
    drift <= tolerance * mean.abs() + 3.0 * se * (n - 1.0)
}

fn feed(emu: &mut Emulator, rows: &[TraceRow]) -> Result<(), HarnessError> {
    for r in rows {
        emu.tick(Some(AnalogInput { current_na: r.current_na, temp_c: r.temp_c, rh_pct: r.rh_pct }))
            .map_err(|e| HarnessError::Runtime(e.to_string()))?;
    }
    Ok(())
}

/// Puts the sensor into each jar in turn, averages the late plateau of its
/// minute records and fits counts against the Henry's-law headspace ppm.
pub fn run_calibration(
    routine: &CalibrationRoutine,
    sensor: &SensorModel,
    device: &DeviceConfig,
    seed: u64,
) -> Result<CalibrationReport, HarnessError> {
    if !routine.jar_duration_s.is_multiple_of(60) || !routine.extension_s.is_multiple_of(60) {
        return Err(HarnessError::Validation("jar and extension durations must be whole minutes".into()));
    }
    let cfg = DeviceConfig { name: "CAL-01".into(), flash_path: None, ..device.clone() };
    let mut emu = Emulator::new(cfg).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0xCA1B);
    let noise_sd = sensor.noise_clean_sd_na.unwrap_or(crate::physio::NoiseParams::default().clean_sd_na);
    let mut jars = Vec::new();
    let mut warnings = Vec::new();
    let max_len = routine.jar_duration_s + u64::from(routine.max_extensions) * routine.extension_s;
    for &pct in &routine.w_v_percent {
        let jar = JarConfig {
            temp_c: routine.temp_c,
            time_const_s: routine.time_const_s,
            duration_s: max_len,
            ..JarConfig::from_w_v_percent(pct)
        };
        let trace = simulate_jar(&jar, &sensor.henry, &sensor.drift, &sensor.fuel_cell, noise_sd, &mut rng)
            .map_err(|e| HarnessError::Validation(e.to_string()))?;
        let start_len = emu.fifo().len() as usize;
        let mut fed = routine.jar_duration_s as usize;
        feed(&mut emu, &trace.rows[..fed])?;
        let (mut w0, mut w1) = routine.window_s;
        let mut extensions = 0;
        let (values, ok) = loop {
            let recs: Vec<FlashRecord> = emu.fifo().iter().skip(start_len).collect();
            let values = window_values(&recs, w0, w1);
            let ok = plateaued(&values, routine.plateau_tolerance);
            if ok || extensions == routine.max_extensions {
                break (values, ok);
            }
            extensions += 1;
            let next = fed + routine.extension_s as usize;
            feed(&mut emu, &trace.rows[fed..next])?;
            fed = next;
            w0 += routine.extension_s;
            w1 += routine.extension_s;
        };
        if extensions > 0 {
            warnings.push(format!("jar {pct}% w/v extended {extensions} time(s) to reach a plateau"));
        }
        if !ok {
            warnings.push(format!("jar {pct}% w/v did not plateau; using the last window anyway"));
        }
        if values.is_empty() {
            return Err(HarnessError::Runtime(format!("no records in the window for jar {pct}% w/v")));
        }
        jars.push(JarResult {
            w_v_percent: pct,
            liquid_mg_dl: jar.liquid_mg_dl,
            equilibrium_ppm: trace.equilibrium_ppm,
            mean_counts: values.iter().sum::<f64>() / values.len() as f64,
            window_s: (w0, w1),
            extensions,
            plateau_ok: ok,
        });
    }
    let pts: Vec<(f64, f64)> = jars.iter().map(|j| (j.equilibrium_ppm, j.mean_counts)).collect();
    let curve = fit_calibration(&pts, device.norm_gain_index).map_err(|e| HarnessError::Runtime(e.to_string()))?;
    let (model_slope, model_icpt) = model_line(sensor, device);
    for w in &warnings {
        tracing::warn!("{w}");
    }
    Ok(CalibrationReport {
        curve,
        model_slope_counts_per_ppm: model_slope,
        model_intercept_counts: model_icpt,
        jars,
        warnings,
    })
}

/// Counts/ppm and zero-ppm counts at the reference gain implied by the sensor model.
pub fn model_line(sensor: &SensorModel, device: &DeviceConfig) -> (f64, f64) {
    let t = &device.gain_table;
    let r = t.resistances_ohm[device.norm_gain_index as usize];
    let per_na = r * 1e-9 / t.v_fullscale * 4095.0;
    (
        sensor.fuel_cell.sensitivity_na_per_ppm * per_na,
        sensor.fuel_cell.zero_current_na * per_na + t.v_ref_offset / t.v_fullscale * 4095.0,
    )
}
