//! Versioned scenario files (TOML).

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::device::DeviceConfig;
use crate::physio::{
    ChamberParams, DrinkEvent, DriftParams, EnvSegment, EnvState, FuelCellParams, HenryModel, NoiseParams,
    SessionConfig, SubjectParams,
};

use super::HarnessError;

pub const CONFIG_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScenarioKind {
    CalibrationRoutine,
    BaselineCharacterization,
    OneDrink,
    TwoDrink,
    ClothingComparison,
    InterpersonalComparison,
    Custom,
}

impl ScenarioKind {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::CalibrationRoutine => "calibration_routine",
            Self::BaselineCharacterization => "baseline_characterization",
            Self::OneDrink => "one_drink",
            Self::TwoDrink => "two_drink",
            Self::ClothingComparison => "clothing_comparison",
            Self::InterpersonalComparison => "interpersonal_comparison",
            Self::Custom => "custom",
        }
    }
}

/// Timing of the drinking protocol.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Protocol {
    /// Wear time before the first drink.
    pub baseline_s: u64,
    pub drink_duration_s: u64,
    /// Gap between the starts of consecutive drinks.
    pub drink_spacing_s: u64,
    /// Wear time after the first drink starts.
    pub wear_after_drink_s: u64,
    pub breathalyzer_interval_s: u64,
    /// Half-width of the uniform breathalyzer error, mg/dL.
    pub breathalyzer_noise_mg_dl: f64,
}

impl Default for Protocol {
    fn default() -> Self {
        Self {
            baseline_s: 3600,
            drink_duration_s: 300,
            drink_spacing_s: 300,
            wear_after_drink_s: 6 * 3600,
            breathalyzer_interval_s: 300,
            breathalyzer_noise_mg_dl: 2.0,
        }
    }
}

impl Protocol {
    pub fn duration_s(&self) -> u64 {
        self.baseline_s + self.wear_after_drink_s
    }
}

/// Six-jar calibration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CalibrationRoutine {
    pub w_v_percent: Vec<f64>,
    pub jar_duration_s: u64,
    /// Extraction window, seconds after the sensor goes into the jar.
    pub window_s: (u64, u64),
    /// Extra time added when a jar has not plateaued.
    pub extension_s: u64,
    pub max_extensions: u32,
    /// Plateau test: |window drift| must stay under this fraction of the
    /// window mean signal (plus three noise standard errors).
    pub plateau_tolerance: f64,
    pub temp_c: f64,
    pub time_const_s: f64,
}

impl Default for CalibrationRoutine {
    fn default() -> Self {
        Self {
            w_v_percent: vec![0.0, 0.12, 0.24, 0.36, 0.48, 0.60],
            jar_duration_s: 1800,
            window_s: (1500, 1800),
            extension_s: 300,
            max_extensions: 6,
            plateau_tolerance: 0.01,
            temp_c: 25.0,
            time_const_s: 240.0,
        }
    }
}

/// Sensor physics shared by every arm.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct SensorModel {
    pub drift: DriftParams,
    pub chamber: ChamberParams,
    pub fuel_cell: FuelCellParams,
    pub henry: HenryModel,
    pub noise_clean_sd_na: Option<f64>,
    pub noise_on_body_sd_na: Option<f64>,
}

/// One wearer/session. Drinks default to the scenario's count of standard
/// drinks on the protocol schedule.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ArmConfig {
    pub name: String,
    #[serde(default)]
    pub device_name: Option<String>,
    #[serde(default)]
    pub subject: SubjectParams,
    #[serde(default)]
    pub standard_drinks: Option<u32>,
    #[serde(default)]
    pub drinks: Option<Vec<DrinkEvent>>,
    #[serde(default)]
    pub env_schedule: Option<Vec<EnvSegment>>,
    #[serde(default = "one")]
    pub partition_coefficient: f64,
}

fn one() -> f64 {
    1.0
}

impl ArmConfig {
    pub fn new(name: &str, subject: SubjectParams) -> Self {
        Self {
            name: name.into(),
            device_name: None,
            subject,
            standard_drinks: None,
            drinks: None,
            env_schedule: None,
            partition_coefficient: 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OutageKind {
    /// Service process stops and restarts on the same port and data dir.
    Service,
    /// Radio link drops; the gateway reconnects and resubscribes.
    Link,
    /// Gateway process dies and restarts from its spool directory.
    Gateway,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Outage {
    pub kind: OutageKind,
    pub start_s: u64,
    pub duration_s: u64,
    /// Arm affected by link/gateway outages; all arms when absent.
    #[serde(default)]
    pub arm: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub version: u32,
    pub scenario: ScenarioKind,
    #[serde(default)]
    pub seed: u64,
    #[serde(default)]
    pub protocol: Protocol,
    #[serde(default)]
    pub calibration: CalibrationRoutine,
    /// Existing calibration JSON; the jar routine runs when absent.
    #[serde(default)]
    pub calibration_file: Option<PathBuf>,
    #[serde(default)]
    pub device: DeviceConfig,
    #[serde(default)]
    pub sensor: SensorModel,
    #[serde(default)]
    pub env: EnvState,
    #[serde(default)]
    pub arms: Vec<ArmConfig>,
    #[serde(default)]
    pub outages: Vec<Outage>,
    /// Alcohol-free spans for the quadratic baseline, seconds from start.
    /// Defaults to the second half of the pre-drink hour plus the final hour.
    #[serde(default)]
    pub baseline_windows_s: Option<Vec<(f64, f64)>>,
    /// Points per upload batch.
    #[serde(default = "batch_default")]
    pub batch_size: usize,
    /// Session length override (defaults to the protocol length).
    #[serde(default)]
    pub duration_s: Option<u64>,
}

fn batch_default() -> usize {
    60
}

impl ScenarioConfig {
    pub fn new(scenario: ScenarioKind) -> Self {
        let mut cfg = Self {
            version: CONFIG_VERSION,
            scenario,
            seed: 1,
            protocol: Protocol::default(),
            calibration: CalibrationRoutine::default(),
            calibration_file: None,
            device: DeviceConfig::default(),
            sensor: SensorModel::default(),
            env: EnvState::default(),
            arms: Vec::new(),
            outages: Vec::new(),
            baseline_windows_s: None,
            batch_size: batch_default(),
            duration_s: None,
        };
        cfg.arms = match scenario {
            ScenarioKind::CalibrationRoutine => vec![],
            ScenarioKind::BaselineCharacterization => {
                let mut a = ArmConfig::new("baseline", SubjectParams::default());
                a.standard_drinks = Some(0);
                // 30 min on the bench, then worn
                let off = EnvState { worn: false, ..EnvState::default() };
                a.env_schedule = Some(vec![
                    EnvSegment { t_start_s: 0.0, env: off },
                    EnvSegment { t_start_s: 1800.0, env: EnvState::default() },
                ]);
                cfg.duration_s = Some(4 * 3600);
                vec![a]
            }
            ScenarioKind::OneDrink => vec![ArmConfig::new("subject", SubjectParams::default())],
            ScenarioKind::TwoDrink => {
                let mut a = ArmConfig::new("subject", SubjectParams::default());
                a.standard_drinks = Some(2);
                vec![a]
            }
            ScenarioKind::ClothingComparison => vec![
                ArmConfig::new("tight", SubjectParams { perspiration_ml_hr: 20.8, ..SubjectParams::default() }),
                ArmConfig::new("loose", SubjectParams { perspiration_ml_hr: 500.0, ..SubjectParams::default() }),
            ],
            ScenarioKind::InterpersonalComparison => vec![
                ArmConfig::new(
                    "subject_a",
                    SubjectParams { body_mass_kg: 85.0, perspiration_ml_hr: 300.0, ..SubjectParams::default() },
                ),
                ArmConfig::new(
                    "subject_b",
                    SubjectParams { body_mass_kg: 68.0, widmark_r: 0.62, perspiration_ml_hr: 60.0, ..SubjectParams::default() },
                ),
            ],
            ScenarioKind::Custom => vec![ArmConfig::new("subject", SubjectParams::default())],
        };
        cfg
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::Validation(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Loads a file; a relative `calibration_file` resolves against its directory.
    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))?;
        let mut cfg = Self::from_toml(&text)?;
        if let (Some(p), Some(dir)) = (cfg.calibration_file.as_mut(), path.parent()) {
            if p.is_relative() {
                *p = dir.join(&*p);
            }
        }
        Ok(cfg)
    }

    pub fn total_duration_s(&self) -> u64 {
        self.duration_s.unwrap_or_else(|| self.protocol.duration_s())
    }

    pub fn default_drinks(&self) -> u32 {
        match self.scenario {
            ScenarioKind::TwoDrink => 2,
            ScenarioKind::BaselineCharacterization | ScenarioKind::CalibrationRoutine => 0,
            _ => 1,
        }
    }

    pub fn arm_drinks(&self, arm: &ArmConfig) -> Vec<DrinkEvent> {
        if let Some(d) = &arm.drinks {
            return d.clone();
        }
        let n = arm.standard_drinks.unwrap_or_else(|| self.default_drinks());
        (0..n)
            .map(|i| DrinkEvent {
                duration_s: self.protocol.drink_duration_s as f64,
                ..DrinkEvent::standard((self.protocol.baseline_s + u64::from(i) * self.protocol.drink_spacing_s) as f64)
            })
            .collect()
    }

    pub fn first_drink_s(&self) -> Option<f64> {
        self.arms
            .iter()
            .flat_map(|a| self.arm_drinks(a))
            .map(|d| d.t_start_s)
            .min_by(f64::total_cmp)
    }

    pub fn device_name(&self, idx: usize) -> String {
        self.arms[idx].device_name.clone().unwrap_or_else(|| format!("TAC-{:02}", idx + 1))
    }

    /// Ground-truth physiology for one arm.
    pub fn session_config(&self, idx: usize) -> SessionConfig {
        let arm = &self.arms[idx];
        let mut s = SessionConfig::new(arm.subject.clone(), self.arm_drinks(arm), self.total_duration_s());
        s.env_schedule = arm
            .env_schedule
            .clone()
            .unwrap_or_else(|| vec![EnvSegment { t_start_s: 0.0, env: self.env }]);
        s.drift = self.sensor.drift;
        s.chamber = self.sensor.chamber;
        s.fuel_cell = self.sensor.fuel_cell;
        s.henry = self.sensor.henry;
        s.partition_coefficient = arm.partition_coefficient;
        let defaults = NoiseParams::default();
        s.noise = NoiseParams {
            seed: self.seed.wrapping_mul(1000).wrapping_add(idx as u64),
            clean_sd_na: self.sensor.noise_clean_sd_na.unwrap_or(defaults.clean_sd_na),
            on_body_sd_na: self.sensor.noise_on_body_sd_na.unwrap_or(defaults.on_body_sd_na),
        };
        s
    }

    pub fn baseline_windows(&self) -> Vec<(f64, f64)> {
        if let Some(w) = &self.baseline_windows_s {
            return w.clone();
        }
        let end = self.total_duration_s() as f64;
        match self.first_drink_s() {
            Some(first) => vec![(first / 2.0, first), ((end - 3600.0).max(first), end)],
            // no alcohol at all: everything after the first half hour of wear
            None => vec![(3600.0f64.min(end / 2.0), end)],
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::Validation(m));
        if self.version != CONFIG_VERSION {
            return bad(format!("unsupported config version {} (expected {CONFIG_VERSION})", self.version));
        }
        self.device.validate().map_err(|e| HarnessError::Validation(e.to_string()))?;
        self.sensor.drift.validate().map_err(|e| HarnessError::Validation(e.to_string()))?;
        if self.batch_size == 0 {
            return bad("batch_size must be > 0".into());
        }
        let cal = &self.calibration;
        if self.calibration_file.is_none() {
            let mut distinct = cal.w_v_percent.clone();
            distinct.sort_by(f64::total_cmp);
            distinct.dedup();
            if distinct.len() < 2 || cal.w_v_percent.iter().any(|p| !(*p >= 0.0)) {
                return bad("calibration needs at least 2 distinct non-negative concentrations".into());
            }
            if !(cal.window_s.0 < cal.window_s.1 && cal.window_s.1 <= cal.jar_duration_s) {
                return bad("calibration window must lie inside the jar duration".into());
            }
            if cal.window_s.1 - cal.window_s.0 < 180 {
                return bad("calibration window must span at least 3 minutes".into());
            }
        }
        let needs_arms = !matches!(self.scenario, ScenarioKind::CalibrationRoutine);
        if needs_arms && self.arms.is_empty() {
            return bad(format!("scenario {} needs at least one arm", self.scenario.as_str()));
        }
        let mut names: Vec<String> = (0..self.arms.len()).map(|i| self.device_name(i)).collect();
        for n in &names {
            if !crate::schema::valid_device_name(n) || n.len() > crate::device::frame::MAX_PAYLOAD {
                return bad(format!("invalid device name {n:?}"));
            }
        }
        names.sort();
        names.dedup();
        if names.len() != self.arms.len() {
            return bad("device names must be unique".into());
        }
        let mut arm_names: Vec<&str> = self.arms.iter().map(|a| a.name.as_str()).collect();
        if let Some(n) = arm_names.iter().find(|n| !crate::schema::valid_device_name(n)) {
            return bad(format!("invalid arm name {n:?}"));
        }
        arm_names.sort_unstable();
        arm_names.dedup();
        if arm_names.len() != self.arms.len() {
            return bad("arm names must be unique".into());
        }
        for i in 0..self.arms.len() {
            self.session_config(i)
                .validate()
                .map_err(|e| HarnessError::Validation(format!("arm {}: {e}", self.arms[i].name)))?;
        }
        match self.scenario {
            ScenarioKind::OneDrink | ScenarioKind::TwoDrink if self.arms.len() != 1 => {
                return bad(format!("{} takes exactly one arm", self.scenario.as_str()));
            }
            ScenarioKind::ClothingComparison => {
                if self.arms.len() != 2 {
                    return bad("clothing_comparison takes exactly two arms".into());
                }
                let (a, b) = (&self.arms[0], &self.arms[1]);
                let strip = |s: &SubjectParams| SubjectParams { perspiration_ml_hr: 0.0, ..s.clone() };
                if strip(&a.subject) != strip(&b.subject)
                    || self.arm_drinks(a) != self.arm_drinks(b)
                    || a.env_schedule != b.env_schedule
                {
                    return bad("clothing_comparison arms may differ only in perspiration rate".into());
                }
            }
            ScenarioKind::InterpersonalComparison if self.arms.len() < 2 => {
                return bad("interpersonal_comparison needs at least two arms".into());
            }
            _ => {}
        }
        for o in &self.outages {
            if o.duration_s == 0 || o.start_s + o.duration_s >= self.total_duration_s() {
                return bad(format!("outage at {} s must end before the session does", o.start_s));
            }
            if let Some(a) = &o.arm {
                if !self.arms.iter().any(|x| &x.name == a) {
                    return bad(format!("outage names unknown arm {a:?}"));
                }
            }
        }
        if let Some(ws) = &self.baseline_windows_s {
            if ws.is_empty() || ws.iter().any(|(a, b)| !(a < b)) {
                return bad("baseline windows must be non-empty (start < end) spans".into());
            }
        }
        Ok(())
    }
}
