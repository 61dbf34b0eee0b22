use std::io::Write;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{
    bac_profile, chamber_step, invalid, sweat_alcohol_mg_dl, ChamberParams, ChamberState,
    DriftParams, DrinkEvent, FuelCell, FuelCellParams, HenryModel, PhysioError, SubjectParams,
};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvState {
    #[serde(rename = "ambient_temp_C")]
    pub ambient_temp_c: f64,
    #[serde(rename = "skin_temp_C")]
    pub skin_temp_c: f64,
    pub ambient_rh_pct: f64,
    #[serde(default)]
    pub ambient_ethanol_ppm: f64,
    /// Sensor strapped to skin; when false the chamber is open air.
    #[serde(default = "yes")]
    pub worn: bool,
    #[serde(default = "one")]
    pub perspiration_multiplier: f64,
}

fn yes() -> bool {
    true
}

fn one() -> f64 {
    1.0
}

impl Default for EnvState {
    fn default() -> Self {
        Self {
            ambient_temp_c: 25.0,
            skin_temp_c: 33.0,
            ambient_rh_pct: 40.0,
            ambient_ethanol_ppm: 0.0,
            worn: true,
            perspiration_multiplier: 1.0,
        }
    }
}

impl EnvState {
    pub fn validate(&self) -> Result<(), PhysioError> {
        if !(0.0..=100.0).contains(&self.ambient_rh_pct) {
            return Err(invalid("ambient_rh_pct must be in [0, 100]"));
        }
        if !(self.ambient_ethanol_ppm >= 0.0) {
            return Err(invalid("ambient_ethanol_ppm must be >= 0"));
        }
        if !(self.perspiration_multiplier >= 0.0) {
            return Err(invalid("perspiration_multiplier must be >= 0"));
        }
        Ok(())
    }

    /// Temperature difference across the electrodes; zero off-body.
    pub fn temp_gradient_c(&self) -> f64 {
        if self.worn {
            self.skin_temp_c - self.ambient_temp_c
        } else {
            0.0
        }
    }
}

/// Environment in force from `t_start_s` until the next segment.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvSegment {
    pub t_start_s: f64,
    #[serde(flatten)]
    pub env: EnvState,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct NoiseParams {
    pub seed: u64,
    #[serde(rename = "clean_sd_nA")]
    pub clean_sd_na: f64,
    #[serde(rename = "on_body_sd_nA")]
    pub on_body_sd_na: f64,
}

impl Default for NoiseParams {
    fn default() -> Self {
        // 5.8 and 23.8 counts at the 1.365 counts/nA reference gain
        let counts_per_na = 1e-9 * 1e6 / 3.0 * 4095.0;
        Self {
            seed: 0,
            clean_sd_na: 5.8 / counts_per_na,
            on_body_sd_na: 23.8 / counts_per_na,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SessionConfig {
    pub subject: SubjectParams,
    #[serde(default)]
    pub drinks: Vec<DrinkEvent>,
    pub env_schedule: Vec<EnvSegment>,
    #[serde(default)]
    pub drift: DriftParams,
    #[serde(default)]
    pub chamber: ChamberParams,
    #[serde(default)]
    pub fuel_cell: FuelCellParams,
    #[serde(default)]
    pub henry: HenryModel,
    #[serde(default = "one")]
    pub partition_coefficient: f64,
    #[serde(default)]
    pub noise: NoiseParams,
    pub duration_s: u64,
}

impl SessionConfig {
    pub fn new(subject: SubjectParams, drinks: Vec<DrinkEvent>, duration_s: u64) -> Self {
        Self {
            subject,
            drinks,
            env_schedule: vec![EnvSegment { t_start_s: 0.0, env: EnvState::default() }],
            drift: DriftParams::default(),
            chamber: ChamberParams::default(),
            fuel_cell: FuelCellParams::default(),
            henry: HenryModel::default(),
            partition_coefficient: 1.0,
            noise: NoiseParams::default(),
            duration_s,
        }
    }

    pub fn validate(&self) -> Result<(), PhysioError> {
        self.subject.validate()?;
        self.drift.validate()?;
        for d in &self.drinks {
            d.validate()?;
        }
        if self.env_schedule.is_empty() {
            return Err(invalid("env_schedule must have at least one segment"));
        }
        if self.env_schedule[0].t_start_s > 0.0 {
            return Err(invalid("first env segment must start at t = 0"));
        }
        if self.env_schedule.windows(2).any(|w| !(w[1].t_start_s > w[0].t_start_s)) {
            return Err(invalid("env segments must be strictly increasing in time"));
        }
        for seg in &self.env_schedule {
            seg.env.validate()?;
        }
        if self.duration_s == 0 {
            return Err(invalid("duration_s must be > 0"));
        }
        if !(self.partition_coefficient >= 0.0) {
            return Err(invalid("partition_coefficient must be >= 0"));
        }
        Ok(())
    }

    pub fn env_at(&self, t_s: f64) -> &EnvState {
        let idx = self.env_schedule.partition_point(|s| s.t_start_s <= t_s);
        &self.env_schedule[idx.saturating_sub(1)].env
    }
}

/// One second of ground truth. `current_na` is the total electrode current,
/// zero current and noise included; it is what the device front end sees.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TraceRow {
    pub t_s: f64,
    pub bac_mg_dl: f64,
    pub sweat_mg_dl: f64,
    pub chamber_ppm: f64,
    pub rh_pct: f64,
    pub temp_c: f64,
    pub current_na: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct SessionTrace {
    pub rows: Vec<TraceRow>,
}

impl SessionTrace {
    pub const CSV_HEADER: &'static str = "t_s,bac_mg_dL,sweat_mg_dL,chamber_ppm,rh_pct,temp_C";

    pub fn write_csv<W: Write>(&self, mut w: W) -> std::io::Result<()> {
        writeln!(w, "{}", Self::CSV_HEADER)?;
        for r in &self.rows {
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.t_s, r.bac_mg_dl, r.sweat_mg_dl, r.chamber_ppm, r.rh_pct, r.temp_c
            )?;
        }
        Ok(())
    }

    pub fn times(&self) -> Vec<f64> {
        self.rows.iter().map(|r| r.t_s).collect()
    }
}

/// Steps the whole BAC -> chamber -> fuel cell chain on a 1 s grid.
pub fn simulate_session(cfg: &SessionConfig) -> Result<SessionTrace, PhysioError> {
    cfg.validate()?;
    let grid: Vec<f64> = (0..cfg.duration_s).map(|t| t as f64).collect();
    let bac = bac_profile(&cfg.subject, &cfg.drinks, &grid)?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.noise.seed);
    let clean = Normal::new(0.0, cfg.noise.clean_sd_na).map_err(|e| invalid(e.to_string()))?;
    let on_body = Normal::new(0.0, cfg.noise.on_body_sd_na).map_err(|e| invalid(e.to_string()))?;

    let mut cell = FuelCell::new(cfg.drift, cfg.fuel_cell);
    let mut chamber = ChamberState::ambient(cfg.env_at(0.0));
    let mut prev_rh = chamber.chamber_rh_pct;
    let mut donned_at: Option<f64> = None;
    let mut rows = Vec::with_capacity(grid.len());

    for (&t, &bac_now) in grid.iter().zip(&bac) {
        let env = cfg.env_at(t);
        donned_at = match (env.worn, donned_at) {
            (true, None) => Some(t),
            (true, some) => some,
            (false, _) => None,
        };
        let sweat = sweat_alcohol_mg_dl(bac_now, cfg.partition_coefficient)?;
        let rh_rate = chamber.chamber_rh_pct - prev_rh;
        let since_donned = donned_at.map(|t0| t - t0).unwrap_or(0.0);
        let signal = cell.step(chamber.gas_ppm, env.temp_gradient_c(), rh_rate, since_donned, 1.0);
        let noise = if env.worn { on_body.sample(&mut rng) } else { clean.sample(&mut rng) };
        rows.push(TraceRow {
            t_s: t,
            bac_mg_dl: bac_now,
            sweat_mg_dl: sweat,
            chamber_ppm: chamber.gas_ppm,
            rh_pct: chamber.chamber_rh_pct,
            temp_c: chamber.chamber_temp_c,
            current_na: signal + cfg.fuel_cell.zero_current_na + noise,
        });
        prev_rh = chamber.chamber_rh_pct;
        chamber = chamber_step(&chamber, sweat, &cfg.subject, env, &cfg.chamber, &cfg.henry, 1.0)?;
    }
    Ok(SessionTrace { rows })
}
