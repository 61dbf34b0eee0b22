//! Scenario runs and the offline `analyze`/`plot` verbs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::analytics::CalibrationCurve;
use crate::clock::NS_PER_S;
use crate::device::GainTable;
use crate::schema::{read_csv, PointRecord, Source};

use super::analysis::{
    arm_metrics, breathalyzer, compare, tacg_series, ArmInput, MetricsReport, TacgSeries, METRICS_SCHEMA_VERSION,
};
use super::calibration::{run_calibration, CalibrationReport};
use super::config::{ScenarioConfig, ScenarioKind, CONFIG_VERSION};
use super::pipeline::{run_pipeline, PipelineRun};
use super::plots::write_plots;
use super::HarnessError;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |e| HarnessError::Runtime(format!("{}: {e}", path.display()))
}

fn write(dir: &Path, name: &str, body: impl AsRef<[u8]>) -> Result<(), HarnessError> {
    let path = dir.join(name);
    std::fs::write(&path, body).map_err(io_err(&path))
}

fn read(path: &Path) -> Result<String, HarnessError> {
    std::fs::read_to_string(path).map_err(|e| HarnessError::Validation(format!("{}: {e}", path.display())))
}

/// Accepts either a full calibration report or a bare curve.
pub fn load_calibration(path: &Path) -> Result<CalibrationCurve, HarnessError> {
    let text = read(path)?;
    if let Ok(r) = serde_json::from_str::<CalibrationReport>(&text) {
        return Ok(r.curve);
    }
    serde_json::from_str::<CalibrationCurve>(&text)
        .map_err(|e| HarnessError::Validation(format!("{}: not a calibration file: {e}", path.display())))
}

/// Runs the jar routine and writes `calibration.json` plus a per-jar CSV.
pub fn calibrate(cfg: &ScenarioConfig, out: &Path) -> Result<CalibrationReport, HarnessError> {
    cfg.validate()?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let rep = run_calibration(&cfg.calibration, &cfg.sensor, &cfg.device, cfg.seed)?;
    write(out, "calibration.json", serde_json::to_string_pretty(&rep).expect("serialize") + "\n")?;
    let mut csv = String::from("w_v_percent,liquid_mg_dL,equilibrium_ppm,mean_counts,window_start_s,window_end_s\n");
    for j in &rep.jars {
        csv += &format!(
            "{},{},{},{},{},{}\n",
            j.w_v_percent, j.liquid_mg_dl, j.equilibrium_ppm, j.mean_counts, j.window_s.0, j.window_s.1
        );
    }
    write(out, "calibration_jars.csv", csv)?;
    Ok(rep)
}

pub fn write_breathalyzer_csv(readings: &[(f64, f64)]) -> String {
    let mut s = String::from("t_s,bac_mg_dL\n");
    for (t, v) in readings {
        s += &format!("{t},{v}\n");
    }
    s
}

pub fn read_breathalyzer_csv(text: &str) -> Result<Vec<(f64, f64)>, HarnessError> {
    csv::Reader::from_reader(text.as_bytes())
        .deserialize::<(f64, f64)>()
        .map(|r| r.map_err(|e| HarnessError::Validation(format!("breathalyzer CSV: {e}"))))
        .collect()
}

pub struct SessionOutcome {
    pub report: MetricsReport,
    pub calibration: CalibrationCurve,
    pub run: PipelineRun,
    pub tacg: Vec<TacgSeries>,
    pub breathalyzer: Vec<Vec<(f64, f64)>>,
}

fn realtime_counts(points: &[PointRecord], t0_ns: i64) -> (Vec<f64>, Vec<f64>) {
    points
        .iter()
        .filter(|p| p.source == Source::Realtime)
        .map(|p| ((p.t_ns - t0_ns) as f64 / NS_PER_S as f64, p.alcohol_raw))
        .unzip()
}

fn windows_span(w: &[(f64, f64)]) -> (f64, f64) {
    let lo = w.iter().map(|x| x.0).fold(f64::INFINITY, f64::min);
    let hi = w.iter().map(|x| x.1).fold(f64::NEG_INFINITY, f64::max);
    (lo, hi)
}

/// Off-body spans of an arm's environment schedule.
fn off_body_window(cfg: &ScenarioConfig, idx: usize) -> Option<(f64, f64)> {
    let sc = cfg.session_config(idx);
    let segs = &sc.env_schedule;
    let end = cfg.total_duration_s() as f64;
    segs.iter().enumerate().find(|(_, s)| !s.env.worn).map(|(i, s)| {
        let stop = segs.get(i + 1).map_or(end, |n| n.t_start_s);
        (s.t_start_s, stop)
    })
}

/// Full scenario: calibration, lockstep pipeline, analysis, files and plots.
pub fn run_session(cfg: &ScenarioConfig, out: &Path) -> Result<SessionOutcome, HarnessError> {
    cfg.validate()?;
    if cfg.scenario == ScenarioKind::CalibrationRoutine {
        return Err(HarnessError::Validation("calibration_routine runs with `calibrate`, not `session`".into()));
    }
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let cal = match &cfg.calibration_file {
        Some(p) => load_calibration(p)?,
        None => calibrate(cfg, out)?.curve,
    };
    let run = run_pipeline(cfg, &out.join("work"))?;
    let windows = cfg.baseline_windows();
    let end = cfg.total_duration_s() as f64;
    let mut arms = Vec::new();
    let mut tacgs = Vec::new();
    let mut bacs = Vec::new();
    let mut integrity = BTreeMap::new();
    for (i, arm) in run.arms.iter().enumerate() {
        let acfg = &cfg.arms[i];
        let first = cfg.arm_drinks(acfg).iter().map(|d| d.t_start_s).min_by(f64::total_cmp);
        let bac = match first {
            Some(t) => breathalyzer(
                &arm.trace,
                t,
                cfg.protocol.breathalyzer_interval_s,
                cfg.protocol.breathalyzer_noise_mg_dl,
                cfg.seed.wrapping_mul(7919).wrapping_add(i as u64),
            ),
            None => Vec::new(),
        };
        let tacg = tacg_series(&arm.backfill, run.epoch_ns, cfg.device.norm_gain_index, &cal, &cfg.device.gain_table, &windows)
            .map_err(|e| HarnessError::Runtime(format!("{}: {e}", arm.name)))?;
        let (rt_t, rt_c) = realtime_counts(&arm.realtime, run.epoch_ns);
        let auc_window_s = match first {
            Some(t) => (t, end),
            None => windows_span(&windows),
        };
        let m = arm_metrics(&ArmInput {
            name: &arm.name,
            device: &arm.device,
            tacg: &tacg,
            bac: &bac,
            auc_window_s,
            baseline_windows_s: &windows,
            off_body_window_s: off_body_window(cfg, i),
            realtime: Some((&rt_t, &rt_c)),
            cal: &cal,
        })
        .map_err(|e| HarnessError::Runtime(format!("{}: {e}", arm.name)))?;

        let mut gt = Vec::new();
        arm.trace.write_csv(&mut gt).map_err(io_err(out))?;
        write(out, &format!("ground_truth_{}.csv", arm.name), gt)?;
        write(out, &format!("breathalyzer_{}.csv", arm.name), write_breathalyzer_csv(&bac))?;
        write(out, &format!("service_export_{}.csv", arm.device), &arm.export_csv)?;
        let mut tc = Vec::new();
        tacg.write_csv(&mut tc).map_err(io_err(out))?;
        write(out, &format!("tacg_{}.csv", arm.name), tc)?;
        write_plots(out, &arm.name, &bac, &tacg)?;
        let analyze = AnalyzeConfig {
            version: CONFIG_VERSION,
            name: arm.name.clone(),
            device: Some(arm.device.clone()),
            export_csv: format!("service_export_{}.csv", arm.device).into(),
            calibration: None,
            calibration_curve: Some(cal),
            baseline_windows_s: windows.clone(),
            t0_ns: Some(run.epoch_ns),
            breathalyzer_csv: Some(format!("breathalyzer_{}.csv", arm.name).into()),
            auc_window_s: Some(m.auc_window_s),
            off_body_window_s: off_body_window(cfg, i),
            stored_gain_index: cfg.device.norm_gain_index,
            gain_table: cfg.device.gain_table,
        };
        write(out, &format!("analyze_{}.toml", arm.name), toml::to_string(&analyze).expect("serialize"))?;

        integrity.insert(arm.device.clone(), arm.integrity.clone());
        arms.push(m);
        tacgs.push(tacg);
        bacs.push(bac);
    }
    let comparisons = arms.iter().skip(1).map(|b| compare(&arms[0], b)).collect();
    let report = MetricsReport {
        schema_version: METRICS_SCHEMA_VERSION,
        scenario: cfg.scenario.as_str().into(),
        seed: cfg.seed,
        calibration: cal,
        arms,
        comparisons,
        integrity,
    };
    write(out, "metrics.json", report.to_json())?;
    Ok(SessionOutcome { report, calibration: cal, run, tacg: tacgs, breathalyzer: bacs })
}

/// Offline analysis of a service CSV export. Relative paths resolve against
/// the config file's directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AnalyzeConfig {
    pub version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    /// Device to select from the export; the only one present when absent.
    #[serde(default)]
    pub device: Option<String>,
    pub export_csv: PathBuf,
    /// Calibration JSON file; or give the curve inline.
    #[serde(default)]
    pub calibration: Option<PathBuf>,
    #[serde(default)]
    pub calibration_curve: Option<CalibrationCurve>,
    pub baseline_windows_s: Vec<(f64, f64)>,
    /// Time origin; defaults to the first exported point.
    #[serde(default)]
    pub t0_ns: Option<i64>,
    #[serde(default)]
    pub breathalyzer_csv: Option<PathBuf>,
    #[serde(default)]
    pub auc_window_s: Option<(f64, f64)>,
    #[serde(default)]
    pub off_body_window_s: Option<(f64, f64)>,
    #[serde(default = "default_gain")]
    pub stored_gain_index: u8,
    #[serde(default)]
    pub gain_table: GainTable,
}

fn default_name() -> String {
    "subject".into()
}

fn default_gain() -> u8 {
    7
}

fn resolve(base: &Path, p: &Path) -> PathBuf {
    if p.is_relative() {
        base.join(p)
    } else {
        p.to_path_buf()
    }
}

fn valid_stem(name: &str) -> Result<(), HarnessError> {
    if crate::schema::valid_device_name(name) {
        Ok(())
    } else {
        Err(HarnessError::Validation(format!("invalid name {name:?}")))
    }
}

pub fn analyze(config_path: &Path, out: &Path) -> Result<MetricsReport, HarnessError> {
    let cfg: AnalyzeConfig = toml::from_str(&read(config_path)?).map_err(|e| HarnessError::Validation(e.to_string()))?;
    if cfg.version != CONFIG_VERSION {
        return Err(HarnessError::Validation(format!("unsupported config version {}", cfg.version)));
    }
    valid_stem(&cfg.name)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let cal = match (&cfg.calibration, cfg.calibration_curve) {
        (Some(p), None) => load_calibration(&resolve(base, p))?,
        (None, Some(c)) => c,
        _ => return Err(HarnessError::Validation("give exactly one of calibration, calibration_curve".into())),
    };
    let points = read_csv(&read(&resolve(base, &cfg.export_csv))?).map_err(HarnessError::Validation)?;
    let devices: std::collections::BTreeSet<&str> = points.iter().map(|p| p.device.as_str()).collect();
    let device = match &cfg.device {
        Some(d) => d.clone(),
        None if devices.len() == 1 => devices.iter().next().expect("one").to_string(),
        None => return Err(HarnessError::Validation("export holds several devices; set `device`".into())),
    };
    let records: Vec<_> = points
        .iter()
        .filter(|p| p.device == device && p.source == Source::Backfill)
        .map(|p| p.record())
        .collect();
    let Some(first) = records.first() else {
        return Err(HarnessError::Validation(format!("no backfilled points for {device}")));
    };
    let t0 = cfg.t0_ns.unwrap_or(first.t_ns);
    let bac = match &cfg.breathalyzer_csv {
        Some(p) => read_breathalyzer_csv(&read(&resolve(base, p))?)?,
        None => Vec::new(),
    };
    let tacg = tacg_series(&records, t0, cfg.stored_gain_index, &cal, &cfg.gain_table, &cfg.baseline_windows_s)
        .map_err(|e| HarnessError::Validation(e.to_string()))?;
    let window = cfg.auc_window_s.unwrap_or((f64::NEG_INFINITY, f64::INFINITY));
    let realtime: Vec<PointRecord> = points
        .iter()
        .filter(|p| p.device == device && p.source == Source::Realtime)
        .map(|p| p.record())
        .collect();
    let (rt_t, rt_c) = realtime_counts(&realtime, t0);
    let m = arm_metrics(&ArmInput {
        name: &cfg.name,
        device: &device,
        tacg: &tacg,
        bac: &bac,
        auc_window_s: window,
        baseline_windows_s: &cfg.baseline_windows_s,
        off_body_window_s: cfg.off_body_window_s,
        realtime: (!rt_t.is_empty()).then_some((&rt_t[..], &rt_c[..])),
        cal: &cal,
    })
    .map_err(|e| HarnessError::Validation(e.to_string()))?;
    std::fs::create_dir_all(out).map_err(io_err(out))?;
    let mut tc = Vec::new();
    tacg.write_csv(&mut tc).map_err(io_err(out))?;
    write(out, &format!("tacg_{}.csv", cfg.name), tc)?;
    let report = MetricsReport {
        schema_version: METRICS_SCHEMA_VERSION,
        scenario: "analyze".into(),
        seed: 0,
        calibration: cal,
        arms: vec![m],
        comparisons: vec![],
        integrity: BTreeMap::new(),
    };
    write(out, "metrics.json", report.to_json())?;
    Ok(report)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PlotConfig {
    pub version: u32,
    #[serde(default = "default_name")]
    pub name: String,
    /// TACg CSV as written by `session` or `analyze`.
    pub tacg_csv: PathBuf,
    #[serde(default)]
    pub breathalyzer_csv: Option<PathBuf>,
}

pub fn plot(config_path: &Path, out: &Path) -> Result<Vec<String>, HarnessError> {
    let cfg: PlotConfig = toml::from_str(&read(config_path)?).map_err(|e| HarnessError::Validation(e.to_string()))?;
    if cfg.version != CONFIG_VERSION {
        return Err(HarnessError::Validation(format!("unsupported config version {}", cfg.version)));
    }
    valid_stem(&cfg.name)?;
    let base = config_path.parent().unwrap_or(Path::new("."));
    let tacg = TacgSeries::read_csv(&read(&resolve(base, &cfg.tacg_csv))?)?;
    let bac = match &cfg.breathalyzer_csv {
        Some(p) => read_breathalyzer_csv(&read(&resolve(base, p))?)?,
        None => Vec::new(),
    };
    write_plots(out, &cfg.name, &bac, &tacg)
}
