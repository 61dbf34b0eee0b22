use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{invalid, DriftParams, FuelCell, FuelCellParams, HenryModel, PhysioError, TraceRow};

/// A sealed jar of water-ethanol solution with the sensor taped under the lid.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JarConfig {
    pub liquid_mg_dl: f64,
    #[serde(rename = "temp_C")]
    pub temp_c: f64,
    /// Headspace approach to equilibrium.
    pub time_const_s: f64,
    pub duration_s: u64,
    pub headspace_rh_pct: f64,
    pub ambient_rh_pct: f64,
}

impl Default for JarConfig {
    fn default() -> Self {
        Self {
            liquid_mg_dl: 0.0,
            temp_c: 25.0,
            time_const_s: 240.0,
            duration_s: 1800,
            headspace_rh_pct: 95.0,
            ambient_rh_pct: 40.0,
        }
    }
}

impl JarConfig {
    /// `w_v_pct` percent weight/volume; 1% w/v = 1000 mg/dL.
    pub fn from_w_v_percent(w_v_pct: f64) -> Self {
        Self { liquid_mg_dl: w_v_pct * 1000.0, ..Default::default() }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct JarTrace {
    pub equilibrium_ppm: f64,
    pub rows: Vec<TraceRow>,
}

/// Headspace ppm relaxes first-order toward the Henry equilibrium; headspace
/// humidity relaxes toward near-saturation (which fires the humidity transient
/// when the sensor goes in). Sensor is off-body: no thermal drift.
pub fn simulate_jar<R: Rng>(
    jar: &JarConfig,
    henry: &HenryModel,
    drift: &DriftParams,
    fuel_cell: &FuelCellParams,
    noise_sd_na: f64,
    rng: &mut R,
) -> Result<JarTrace, PhysioError> {
    if !(jar.time_const_s > 0.0) || jar.duration_s == 0 {
        return Err(invalid("jar time constant and duration must be > 0"));
    }
    let equilibrium_ppm = henry.gas_ppm(jar.liquid_mg_dl, jar.temp_c)?;
    let noise = Normal::new(0.0, noise_sd_na).map_err(|e| invalid(e.to_string()))?;
    let mut cell = FuelCell::new(*drift, *fuel_cell);
    let rh_tau = 120.0;
    let mut ppm = 0.0_f64;
    let mut rh = jar.ambient_rh_pct;
    let mut prev_rh = rh;
    let mut rows = Vec::with_capacity(jar.duration_s as usize);
    for t in 0..jar.duration_s {
        let signal = cell.step(ppm, 0.0, rh - prev_rh, 0.0, 1.0);
        rows.push(TraceRow {
            t_s: t as f64,
            bac_mg_dl: 0.0,
            sweat_mg_dl: jar.liquid_mg_dl,
            chamber_ppm: ppm,
            rh_pct: rh,
            temp_c: jar.temp_c,
            current_na: signal + fuel_cell.zero_current_na + noise.sample(rng),
        });
        prev_rh = rh;
        ppm += (equilibrium_ppm - ppm) / jar.time_const_s;
        rh += (jar.headspace_rh_pct - rh) / rh_tau;
    }
    Ok(JarTrace { equilibrium_ppm, rows })
}
