use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::{invalid, PhysioError};

/// Alcohol-free baseline behaviour of the fuel cell, in ppm-equivalents.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DriftParams {
    #[serde(rename = "plateau_ppm_per_degC")]
    pub plateau_ppm_per_deg_c: f64,
    pub time_const_s: f64,
    pub humid_spike_max_ppm: f64,
    pub humid_spike_duration_s: f64,
}

impl Default for DriftParams {
    fn default() -> Self {
        // 5.81 ppm-equivalent plateau at the default 8 °C skin-ambient gradient
        Self {
            plateau_ppm_per_deg_c: 5.81 / 8.0,
            time_const_s: 1000.0,
            humid_spike_max_ppm: 3.0,
            humid_spike_duration_s: 450.0,
        }
    }
}

impl DriftParams {
    pub fn validate(&self) -> Result<(), PhysioError> {
        if !(self.time_const_s > 0.0) {
            return Err(invalid("drift time_const_s must be > 0"));
        }
        if !(0.0..=3.0).contains(&self.humid_spike_max_ppm) {
            return Err(invalid("humid_spike_max_ppm must be in [0, 3]"));
        }
        if !(300.0..=600.0).contains(&self.humid_spike_duration_s) {
            return Err(invalid("humid_spike_duration_s must be in [300, 600]"));
        }
        if !(self.plateau_ppm_per_deg_c >= 0.0) {
            return Err(invalid("plateau_ppm_per_degC must be >= 0"));
        }
        Ok(())
    }

    pub fn plateau_ppm(&self, temp_gradient_c: f64) -> f64 {
        temp_gradient_c.signum() * self.plateau_ppm_per_deg_c * temp_gradient_c.abs()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FuelCellParams {
    #[serde(rename = "sensitivity_nA_per_ppm")]
    pub sensitivity_na_per_ppm: f64,
    /// Alcohol-free electrode current, independent of gas and drift.
    #[serde(rename = "zero_current_nA")]
    pub zero_current_na: f64,
    pub rh_rate_threshold_pct_per_s: f64,
}

/// ADC counts per nA at the default 1 MΩ reference gain and 3 V full scale.
const REF_COUNTS_PER_NA: f64 = 1e-9 * 1e6 / 3.0 * 4095.0;

impl Default for FuelCellParams {
    fn default() -> Self {
        Self {
            sensitivity_na_per_ppm: 185.0 / REF_COUNTS_PER_NA,
            zero_current_na: 265.8 / REF_COUNTS_PER_NA,
            rh_rate_threshold_pct_per_s: 0.25,
        }
    }
}

/// `sign(g) * plateau(|g|) * (1 - exp(-t / tau))`; zero before donning.
pub fn baseline_drift_ppm(temp_gradient_c: f64, t_since_donned_s: f64, drift: &DriftParams) -> f64 {
    if t_since_donned_s <= 0.0 || temp_gradient_c == 0.0 {
        return 0.0;
    }
    drift.plateau_ppm(temp_gradient_c) * (1.0 - (-t_since_donned_s / drift.time_const_s).exp())
}

/// Raised-cosine pulse peaking at `amplitude_ppm` halfway through `duration_s`.
pub fn humidity_pulse_ppm(elapsed_s: f64, amplitude_ppm: f64, duration_s: f64) -> f64 {
    if !(0.0..=duration_s).contains(&elapsed_s) {
        return 0.0;
    }
    0.5 * amplitude_ppm * (1.0 - (2.0 * PI * elapsed_s / duration_s).cos())
}

/// Electrode current in nA, excluding the zero current.
///
/// `pulse_elapsed_s` is the time since the active humidity transient started,
/// if one is running (see [`FuelCell`] for the trigger).
pub fn fuel_cell_current_na(
    ppm: f64,
    temp_gradient_c: f64,
    pulse_elapsed_s: Option<f64>,
    t_since_donned_s: f64,
    drift: &DriftParams,
    params: &FuelCellParams,
) -> f64 {
    let drift_ppm = baseline_drift_ppm(temp_gradient_c, t_since_donned_s, drift);
    let pulse_ppm = pulse_elapsed_s
        .map(|e| humidity_pulse_ppm(e, drift.humid_spike_max_ppm, drift.humid_spike_duration_s))
        .unwrap_or(0.0);
    params.sensitivity_na_per_ppm * (ppm.max(0.0) + drift_ppm + pulse_ppm)
}

/// Stateful wrapper that fires a humidity transient when |dRH/dt| crosses the
/// threshold. A running pulse is not retriggered.
#[derive(Debug, Clone)]
pub struct FuelCell {
    pub drift: DriftParams,
    pub params: FuelCellParams,
    pulse_elapsed_s: Option<f64>,
}

impl FuelCell {
    pub fn new(drift: DriftParams, params: FuelCellParams) -> Self {
        Self { drift, params, pulse_elapsed_s: None }
    }

    pub fn pulse_active(&self) -> bool {
        self.pulse_elapsed_s.is_some()
    }

    /// Current for this tick (zero current excluded); advances pulse time by `dt_s`.
    pub fn step(
        &mut self,
        ppm: f64,
        temp_gradient_c: f64,
        rh_rate_pct_per_s: f64,
        t_since_donned_s: f64,
        dt_s: f64,
    ) -> f64 {
        if self.pulse_elapsed_s.is_none()
            && rh_rate_pct_per_s.abs() > self.params.rh_rate_threshold_pct_per_s
        {
            self.pulse_elapsed_s = Some(0.0);
        }
        let current = fuel_cell_current_na(
            ppm,
            temp_gradient_c,
            self.pulse_elapsed_s,
            t_since_donned_s,
            &self.drift,
            &self.params,
        );
        if let Some(e) = self.pulse_elapsed_s {
            let next = e + dt_s;
            self.pulse_elapsed_s = (next <= self.drift.humid_spike_duration_s).then_some(next);
        }
        current
    }
}
