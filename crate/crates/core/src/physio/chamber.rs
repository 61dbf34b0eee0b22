use serde::{Deserialize, Serialize};

use super::{invalid, EnvState, HenryModel, PhysioError, SubjectParams};

/// Well-mixed vapor chamber between skin and sensor.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChamberState {
    pub gas_ppm: f64,
    pub chamber_rh_pct: f64,
    #[serde(rename = "chamber_temp_C")]
    pub chamber_temp_c: f64,
}

impl ChamberState {
    /// Chamber open to ambient air.
    pub fn ambient(env: &EnvState) -> Self {
        Self {
            gas_ppm: env.ambient_ethanol_ppm,
            chamber_rh_pct: env.ambient_rh_pct,
            chamber_temp_c: env.ambient_temp_c,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ChamberParams {
    /// ppm/s contributed per (mL/hr of perspiration x mg/dL of sweat ethanol),
    /// at the reference skin excretion fraction of 1%.
    pub emission_gain: f64,
    pub k_vent_per_s: f64,
    pub k_cell_per_s: f64,
    pub rh_gain_pct_per_ml_hr: f64,
    pub rh_time_const_s: f64,
    pub thermal_time_const_s: f64,
    /// Fraction of the skin-ambient temperature difference seen in the chamber.
    pub skin_coupling: f64,
}

impl Default for ChamberParams {
    fn default() -> Self {
        let k_total = 1.0 / 1200.0;
        Self {
            emission_gain: 0.1 * k_total / 100.0,
            k_vent_per_s: 1.0 / 1500.0,
            k_cell_per_s: 1.0 / 6000.0,
            rh_gain_pct_per_ml_hr: 0.2,
            rh_time_const_s: 120.0,
            thermal_time_const_s: 1000.0,
            skin_coupling: 0.75,
        }
    }
}

impl ChamberParams {
    pub const REFERENCE_SKIN_FRACTION: f64 = 0.01;

    pub fn loss_rate(&self) -> f64 {
        self.k_vent_per_s + self.k_cell_per_s
    }

    pub fn effective_emission(&self, subject: &SubjectParams) -> f64 {
        self.emission_gain * subject.skin_excretion_fraction / Self::REFERENCE_SKIN_FRACTION
    }

    /// Fixed point of the linear ppm balance (before the Henry cap).
    pub fn steady_state_ppm(&self, subject: &SubjectParams, sweat_mg_dl: f64, ambient_ppm: f64) -> f64 {
        (self.effective_emission(subject) * subject.perspiration_ml_hr * sweat_mg_dl
            + self.k_vent_per_s * ambient_ppm)
            / self.loss_rate()
    }
}

/// One explicit-Euler step of the chamber mass balance.
///
/// `d(ppm)/dt = g * perspiration * sweat - (k_vent + k_cell) * ppm + k_vent * ambient`,
/// clamped to `[0, max(henry(sweat), ambient)]`.
pub fn chamber_step(
    state: &ChamberState,
    sweat_mg_dl: f64,
    subject: &SubjectParams,
    env: &EnvState,
    params: &ChamberParams,
    henry: &HenryModel,
    dt_s: f64,
) -> Result<ChamberState, PhysioError> {
    if !(dt_s > 0.0) {
        return Err(invalid("dt_s must be > 0"));
    }
    let perspiration = if env.worn {
        subject.perspiration_ml_hr * env.perspiration_multiplier
    } else {
        0.0
    };

    let emission = params.effective_emission(subject) * perspiration * sweat_mg_dl;
    let d_ppm = emission - params.loss_rate() * state.gas_ppm
        + params.k_vent_per_s * env.ambient_ethanol_ppm;
    let cap = henry
        .gas_ppm(sweat_mg_dl, state.chamber_temp_c)?
        .max(env.ambient_ethanol_ppm);
    let gas_ppm = (state.gas_ppm + dt_s * d_ppm).clamp(0.0, cap);

    let (rh_target, temp_target) = if env.worn {
        (
            (env.ambient_rh_pct + params.rh_gain_pct_per_ml_hr * perspiration).min(100.0),
            env.ambient_temp_c + params.skin_coupling * (env.skin_temp_c - env.ambient_temp_c),
        )
    } else {
        (env.ambient_rh_pct, env.ambient_temp_c)
    };
    let chamber_rh_pct = (state.chamber_rh_pct
        + dt_s * (rh_target - state.chamber_rh_pct) / params.rh_time_const_s)
        .clamp(0.0, 100.0);
    let chamber_temp_c = state.chamber_temp_c
        + dt_s * (temp_target - state.chamber_temp_c) / params.thermal_time_const_s;

    Ok(ChamberState { gas_ppm, chamber_rh_pct, chamber_temp_c })
}
