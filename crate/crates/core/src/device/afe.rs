//! Potentiostat front end: transimpedance gain, 12-bit ADC, auto-ranging.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::DeviceError;

pub const ADC_MAX: u16 = 4095;
/// 90% of full scale: step the gain down above this.
pub const GAIN_DOWN_THRESHOLD: u16 = 3686;
/// 10% of full scale: step the gain up below this.
pub const GAIN_UP_THRESHOLD: u16 = 410;
pub const GAIN_STEPS: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GainTable {
    pub resistances_ohm: [f64; GAIN_STEPS],
    pub v_ref_offset: f64,
    pub v_fullscale: f64,
}

impl Default for GainTable {
    fn default() -> Self {
        // seven internal TIA settings plus a 1 MΩ external resistor
        Self {
            resistances_ohm: [2750.0, 3500.0, 7000.0, 14000.0, 35000.0, 120000.0, 350000.0, 1.0e6],
            v_ref_offset: 0.0,
            v_fullscale: 3.0,
        }
    }
}

impl GainTable {
    pub fn validate(&self) -> Result<(), DeviceError> {
        if self.resistances_ohm.iter().any(|r| !(r.is_finite() && *r > 0.0)) {
            return Err(DeviceError::Config("gain resistances must be positive".into()));
        }
        if self.resistances_ohm.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(DeviceError::Config("gain resistances must be strictly ascending".into()));
        }
        if !(self.v_fullscale > 0.0) {
            return Err(DeviceError::Config("v_fullscale must be > 0".into()));
        }
        Ok(())
    }

    pub fn resistance(&self, gain_index: u8) -> Option<f64> {
        self.resistances_ohm.get(gain_index as usize).copied()
    }

    /// Raw conversion: `clamp(round((I * R + V_off) / V_fs * 4095), 0, 4095)`.
    pub fn counts(&self, current_na: f64, gain_index: u8) -> u16 {
        let r = self.resistances_ohm[gain_index as usize];
        let volts = current_na * 1e-9 * r + self.v_ref_offset;
        let counts = (volts / self.v_fullscale * f64::from(ADC_MAX)).round();
        counts.clamp(0.0, f64::from(ADC_MAX)) as u16
    }

    /// Rescale counts taken at `from` to what `to` would have read.
    pub fn normalize(&self, counts: f64, from: u8, to: u8) -> Option<f64> {
        Some(counts * self.resistance(to)? / self.resistance(from)?)
    }
}

/// One 1 Hz reading from the device.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorSample {
    pub adc_counts: u16,
    pub gain_index: u8,
    pub temp_c: f32,
    pub rh_pct: f32,
}

/// Analog inputs for one tick, straight from the physics model.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AnalogInput {
    pub current_na: f64,
    pub temp_c: f64,
    pub rh_pct: f64,
}

/// Digital temperature/humidity sensor: fixed per-unit error inside the
/// datasheet accuracy, quantized to its resolution.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvSensor {
    pub temp_bias_c: f64,
    pub rh_bias_pct: f64,
}

impl EnvSensor {
    pub const TEMP_ACCURACY_C: f64 = 0.3;
    pub const RH_ACCURACY_PCT: f64 = 2.0;
    pub const TEMP_RESOLUTION_C: f64 = 0.01;
    pub const RH_RESOLUTION_PCT: f64 = 0.04;

    pub fn ideal() -> Self {
        Self { temp_bias_c: 0.0, rh_bias_pct: 0.0 }
    }

    pub fn with_random_error<R: Rng>(rng: &mut R) -> Self {
        Self {
            temp_bias_c: rng.gen_range(-Self::TEMP_ACCURACY_C..=Self::TEMP_ACCURACY_C),
            rh_bias_pct: rng.gen_range(-Self::RH_ACCURACY_PCT..=Self::RH_ACCURACY_PCT),
        }
    }

    pub fn read(&self, temp_c: f64, rh_pct: f64) -> (f32, f32) {
        let q = |v: f64, step: f64| (v / step).round() * step;
        let t = q(temp_c + self.temp_bias_c, Self::TEMP_RESOLUTION_C);
        let rh = q((rh_pct + self.rh_bias_pct).clamp(0.0, 100.0), Self::RH_RESOLUTION_PCT);
        (t as f32, rh as f32)
    }
}

pub fn acquire(input: &AnalogInput, gain_index: u8, table: &GainTable, env: &EnvSensor) -> SensorSample {
    let (temp_c, rh_pct) = env.read(input.temp_c, input.rh_pct);
    SensorSample {
        adc_counts: table.counts(input.current_na, gain_index),
        gain_index,
        temp_c,
        rh_pct,
    }
}

/// Next gain index: one step toward the 10-90% band, at most one per tick.
pub fn auto_gain(sample: &SensorSample) -> u8 {
    let idx = sample.gain_index;
    if sample.adc_counts > GAIN_DOWN_THRESHOLD && idx > 0 {
        idx - 1
    } else if sample.adc_counts < GAIN_UP_THRESHOLD && (idx as usize) < GAIN_STEPS - 1 {
        idx + 1
    } else {
        idx
    }
}
