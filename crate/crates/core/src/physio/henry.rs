use serde::{Deserialize, Serialize};

use super::{invalid, PhysioError};

/// Liquid-to-vapor equilibrium for dilute ethanol.
///
/// `ppm_per_mg_dl_25c` anchors 25 °C; `per_degree_coeff` scales linearly away
/// from it (multiplier `1 + coeff * (T - 25)`). Coefficient 0 means the same
/// constant at every temperature.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct HenryModel {
    pub ppm_per_mg_dl_25c: f64,
    pub per_degree_coeff: f64,
}

impl Default for HenryModel {
    fn default() -> Self {
        Self { ppm_per_mg_dl_25c: 1.0, per_degree_coeff: 0.0 }
    }
}

impl HenryModel {
    pub fn gas_ppm(&self, liquid_mg_dl: f64, temp_c: f64) -> Result<f64, PhysioError> {
        if !(liquid_mg_dl >= 0.0) {
            return Err(invalid(format!("negative liquid concentration {liquid_mg_dl}")));
        }
        let multiplier = 1.0 + self.per_degree_coeff * (temp_c - 25.0);
        Ok(self.ppm_per_mg_dl_25c * multiplier.max(0.0) * liquid_mg_dl)
    }
}

/// Equilibrium vapor concentration with the default model.
pub fn henry_gas_ppm(liquid_mg_dl: f64, temp_c: f64) -> Result<f64, PhysioError> {
    HenryModel::default().gas_ppm(liquid_mg_dl, temp_c)
}
