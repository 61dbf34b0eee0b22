use serde::{Deserialize, Serialize};

use super::{invalid, PhysioError};

pub const ETHANOL_DENSITY_G_PER_ML: f64 = 0.789;

/// mg/dL per g/kg, taking blood density as 1 kg/L.
const MG_DL_PER_G_KG: f64 = 100.0;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SubjectParams {
    pub body_mass_kg: f64,
    pub widmark_r: f64,
    pub absorption_rate_per_hr: f64,
    pub elimination_mg_dl_hr: f64,
    #[serde(rename = "perspiration_mL_hr")]
    pub perspiration_ml_hr: f64,
    #[serde(default = "default_skin_fraction")]
    pub skin_excretion_fraction: f64,
}

fn default_skin_fraction() -> f64 {
    0.01
}

impl Default for SubjectParams {
    fn default() -> Self {
        Self {
            body_mass_kg: 75.0,
            widmark_r: 0.68,
            absorption_rate_per_hr: 6.0,
            elimination_mg_dl_hr: 15.0,
            perspiration_ml_hr: 100.0,
            skin_excretion_fraction: 0.01,
        }
    }
}

impl SubjectParams {
    pub const MIN_PERSPIRATION_ML_HR: f64 = 20.8;
    pub const MAX_PERSPIRATION_ML_HR: f64 = 1800.0;

    pub fn validate(&self) -> Result<(), PhysioError> {
        let positive = [
            ("body_mass_kg", self.body_mass_kg),
            ("widmark_r", self.widmark_r),
            ("absorption_rate_per_hr", self.absorption_rate_per_hr),
            ("elimination_mg_dl_hr", self.elimination_mg_dl_hr),
            ("perspiration_mL_hr", self.perspiration_ml_hr),
            ("skin_excretion_fraction", self.skin_excretion_fraction),
        ];
        for (name, v) in positive {
            if !(v.is_finite() && v > 0.0) {
                return Err(invalid(format!("{name} must be > 0, got {v}")));
            }
        }
        if !(Self::MIN_PERSPIRATION_ML_HR..=Self::MAX_PERSPIRATION_ML_HR)
            .contains(&self.perspiration_ml_hr)
        {
            return Err(invalid(format!(
                "perspiration_mL_hr {} outside [20.8, 1800]",
                self.perspiration_ml_hr
            )));
        }
        if self.skin_excretion_fraction > 0.05 {
            return Err(invalid("skin_excretion_fraction must be in (0, 0.05]"));
        }
        Ok(())
    }

    /// BAC rise in mg/dL per gram of ethanol absorbed.
    pub fn mg_dl_per_gram(&self) -> f64 {
        MG_DL_PER_G_KG / (self.widmark_r * self.body_mass_kg)
    }

    fn absorption_per_s(&self) -> f64 {
        self.absorption_rate_per_hr / 3600.0
    }

    fn elimination_per_s(&self) -> f64 {
        self.elimination_mg_dl_hr / 3600.0
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DrinkEvent {
    pub t_start_s: f64,
    #[serde(rename = "volume_mL")]
    pub volume_ml: f64,
    pub abv_fraction: f64,
    pub duration_s: f64,
}

impl DrinkEvent {
    /// 118 mL of 15% sake, about 14 g of ethanol, taken over five minutes.
    pub fn standard(t_start_s: f64) -> Self {
        Self {
            t_start_s,
            volume_ml: 118.0,
            abv_fraction: 0.15,
            duration_s: 300.0,
        }
    }

    pub fn ethanol_g(&self) -> f64 {
        self.volume_ml * self.abv_fraction * ETHANOL_DENSITY_G_PER_ML
    }

    pub fn validate(&self) -> Result<(), PhysioError> {
        if !(self.duration_s > 0.0) {
            return Err(invalid("drink duration_s must be > 0"));
        }
        if !(0.0..=1.0).contains(&self.abv_fraction) {
            return Err(invalid("abv_fraction must be in [0, 1]"));
        }
        if !(self.volume_ml >= 0.0) || !self.t_start_s.is_finite() {
            return Err(invalid("drink volume must be >= 0 and start finite"));
        }
        Ok(())
    }

    /// Grams of this drink that have left the gut by time `t`.
    ///
    /// Ingestion is a constant-rate infusion over `duration_s` into a gut
    /// compartment that empties first-order at `ka`.
    fn absorbed_g(&self, ka: f64, t: f64) -> f64 {
        let tau = t - self.t_start_s;
        if tau <= 0.0 {
            return 0.0;
        }
        let dose = self.ethanol_g();
        let rate = dose / self.duration_s;
        if tau <= self.duration_s {
            let gut = rate / ka * (1.0 - (-ka * tau).exp());
            rate * tau - gut
        } else {
            let gut_end = rate / ka * (1.0 - (-ka * self.duration_s).exp());
            dose - gut_end * (-ka * (tau - self.duration_s)).exp()
        }
    }
}

/// BAC in mg/dL on `t_grid`: first-order absorption into a Widmark
/// compartment with zero-order elimination, clamped at zero.
pub fn bac_profile(
    subject: &SubjectParams,
    drinks: &[DrinkEvent],
    t_grid: &[f64],
) -> Result<Vec<f64>, PhysioError> {
    if t_grid.is_empty() {
        return Err(invalid("empty time grid"));
    }
    if t_grid.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(invalid("time grid must be strictly increasing"));
    }
    subject.validate()?;
    for d in drinks {
        d.validate()?;
        if d.t_start_s < t_grid[0] {
            return Err(invalid("drink starts before the time grid"));
        }
    }
    let ka = subject.absorption_per_s();
    let beta = subject.elimination_per_s();
    let gain = subject.mg_dl_per_gram();
    let absorbed = |t: f64| drinks.iter().map(|d| d.absorbed_g(ka, t)).sum::<f64>();

    let mut out = Vec::with_capacity(t_grid.len());
    let mut bac = 0.0_f64;
    let mut prev_t = t_grid[0];
    let mut prev_abs = absorbed(prev_t);
    out.push(bac);
    for &t in &t_grid[1..] {
        let abs = absorbed(t);
        bac = (bac + gain * (abs - prev_abs) - beta * (t - prev_t)).max(0.0);
        out.push(bac);
        prev_t = t;
        prev_abs = abs;
    }
    Ok(out)
}

pub fn sweat_alcohol_mg_dl(bac_mg_dl: f64, partition_coefficient: f64) -> Result<f64, PhysioError> {
    if !(bac_mg_dl >= 0.0) {
        return Err(invalid(format!("negative BAC {bac_mg_dl}")));
    }
    if !(partition_coefficient >= 0.0) {
        return Err(invalid("partition coefficient must be >= 0"));
    }
    Ok(partition_coefficient * bac_mg_dl)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn grid(n: usize) -> Vec<f64> {
        (0..n).map(|i| i as f64).collect()
    }

    /// Closed-form peak for a single infusion starting at 0, valid when the
    /// peak falls after the infusion ends. BAC is pinned at zero until the
    /// absorption rate first exceeds elimination (t_rise), then integrates
    /// (absorption - elimination) until they balance again (t_peak).
    fn closed_form_peak(s: &SubjectParams, d: &DrinkEvent) -> (f64, f64) {
        let ka = s.absorption_rate_per_hr / 3600.0;
        let beta = s.elimination_mg_dl_hr / 3600.0;
        let k = 100.0 / (s.widmark_r * s.body_mass_kg);
        let dose = d.volume_ml * d.abv_fraction * 0.789;
        let big_t = d.duration_s;
        let rate = dose / big_t;
        let gut_at = |t: f64| {
            if t <= big_t {
                rate / ka * (1.0 - (-ka * t).exp())
            } else {
                rate / ka * (1.0 - (-ka * big_t).exp()) * (-ka * (t - big_t)).exp()
            }
        };
        let ingested = |t: f64| rate * t.min(big_t);
        let absorbed = |t: f64| ingested(t) - gut_at(t);
        let gut_balance = beta / (k * ka);
        let t_rise = -(1.0 - beta / (k * rate)).ln() / ka;
        let gut_end = rate / ka * (1.0 - (-ka * big_t).exp());
        let t_peak = big_t + (gut_end / gut_balance).ln() / ka;
        let peak = k * (absorbed(t_peak) - absorbed(t_rise)) - beta * (t_peak - t_rise);
        (t_peak, peak)
    }

    #[test]
    fn no_drinks_is_all_zero() {
        let bac = bac_profile(&SubjectParams::default(), &[], &grid(1000)).unwrap();
        assert!(bac.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn empty_grid_is_rejected() {
        assert!(bac_profile(&SubjectParams::default(), &[], &[]).is_err());
        assert!(bac_profile(&SubjectParams::default(), &[], &[0.0, 0.0]).is_err());
    }

    #[test]
    fn single_drink_matches_closed_form_peak() {
        let s = SubjectParams::default();
        let d = DrinkEvent::standard(0.0);
        let (t_peak, peak) = closed_form_peak(&s, &d);
        // frozen from the closed form above
        assert!((t_peak - 1592.4).abs() < 1.0, "t_peak {t_peak}");
        assert!((peak - 18.31).abs() < 0.02, "peak {peak}");

        let bac = bac_profile(&s, &[d], &grid(4 * 3600)).unwrap();
        let (imax, vmax) = bac
            .iter()
            .enumerate()
            .fold((0, f64::MIN), |acc, (i, &v)| if v > acc.1 { (i, v) } else { acc });
        assert!((vmax - peak).abs() < 0.01, "sim peak {vmax} vs {peak}");
        assert!((imax as f64 - t_peak).abs() <= 1.0);
    }

    #[test]
    fn single_drink_rises_then_returns_to_exact_zero() {
        let bac = bac_profile(
            &SubjectParams::default(),
            &[DrinkEvent::standard(600.0)],
            &grid(5 * 3600),
        )
        .unwrap();
        assert!(bac.iter().all(|&v| v >= 0.0));
        assert_eq!(*bac.last().unwrap(), 0.0);
        let imax = bac
            .iter()
            .enumerate()
            .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
            .unwrap()
            .0;
        assert!(bac[..imax].windows(2).all(|w| w[1] >= w[0]));
        assert!(bac[imax..].windows(2).all(|w| w[1] <= w[0]));
    }

    #[test]
    fn double_dose_has_larger_auc() {
        let s = SubjectParams::default();
        let g = grid(6 * 3600);
        let one = bac_profile(&s, &[DrinkEvent::standard(0.0)], &g).unwrap();
        let two = bac_profile(
            &s,
            &[DrinkEvent::standard(0.0), DrinkEvent::standard(0.0)],
            &g,
        )
        .unwrap();
        let (a1, a2): (f64, f64) = (one.iter().sum(), two.iter().sum());
        assert!(a2 > a1);
    }

    #[test]
    fn sweat_partition() {
        assert_eq!(sweat_alcohol_mg_dl(0.0, 1.0).unwrap(), 0.0);
        assert_eq!(sweat_alcohol_mg_dl(80.0, 1.0).unwrap(), 80.0);
        assert!((sweat_alcohol_mg_dl(80.0, 0.9).unwrap() - 72.0).abs() < 1e-12);
        assert!(sweat_alcohol_mg_dl(-1.0, 1.0).is_err());
    }

    #[test]
    fn subject_validation() {
        let mut s = SubjectParams::default();
        assert!(s.validate().is_ok());
        s.perspiration_ml_hr = 10.0;
        assert!(s.validate().is_err());
        s = SubjectParams { skin_excretion_fraction: 0.06, ..Default::default() };
        assert!(s.validate().is_err());
        s = SubjectParams { body_mass_kg: 0.0, ..Default::default() };
        assert!(s.validate().is_err());
    }
}
