//! Acceptance checks. Prints one PASS/FAIL line per criterion and exits
//! non-zero if any fails. Tolerances are pinned below.

use std::collections::HashSet;
use std::net::SocketAddr;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use tacnet::analytics::{adc_to_ppm, remove_baseline, CalibrationCurve};
use tacnet::clock::{VirtualClock, NS_PER_S};
use tacnet::device::{AnalogInput, DeviceConfig, Emulator, FlashFifo, FlashRecord, GainTable, RECORD_LEN};
use tacnet::gateway::{
    record_timestamp, BackfillLedger, DeviceClient, DeviceSession, HttpSink, LocalCsv, SimLink, Spool, Uploader,
};
use tacnet::harness::{run_calibration, run_pipeline, run_session, Outage, OutageKind, ScenarioConfig, ScenarioKind};
use tacnet::physio::{henry_gas_ppm, DriftParams, FuelCellParams};
use tacnet::schema::{widen, Source};
use tacnet::service::ServiceHandle;

// criterion 1
const HENRY_LINEARITY_REL: f64 = 1e-9;
// criterion 2
const CAL_SLOPE_REL: f64 = 0.01;
const CAL_MIN_R2: f64 = 0.999;
const CAL_MAX_RUNTIME: Duration = Duration::from_secs(10);
// criterion 3
const ANCHOR_PPM_TOL: f64 = 0.01;
const ANCHOR_SLOPE: f64 = 185.0;
const ANCHOR_SLOPE_TOL: f64 = 0.05;
// criterion 4
const DRIFT_PLATEAU_PPM: f64 = 5.81;
const NOISE_SD_COUNTS: f64 = 23.8;
const MIN_RMS_REDUCTION: f64 = 0.75;
const BASELINE_MAX_RUNTIME: Duration = Duration::from_secs(1);
// criterion 5
const CODEC_RECORDS: usize = 10_000;
const FLASH_BYTES: u64 = 8 * 1024 * 1024;
const FLASH_SLOTS: u32 = 524_288;
const HUNDRED_DAYS_MIN: u32 = 144_000;
// criterion 6
const BAND: (u16, u16) = (410, 3686);
const MAX_RECOVERY_TICKS: usize = 8;
// criterion 8
const SESSION_MAX_RUNTIME: Duration = Duration::from_secs(30);
// criterion 9
const BAC_RATIO_BAND: (f64, f64) = (0.95, 1.05);
const TACG_RATIO_EXCLUDED: (f64, f64) = (0.9, 1.1);
// criterion 10
const OUTAGE_SCHEDULES: usize = 4;

type Check = Result<String, String>;
type Criterion<'a> = (&'static str, Box<dyn Fn() -> Check + 'a>);

fn ensure(ok: bool, msg: impl Into<String>) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg.into())
    }
}

fn henry_anchor() -> Check {
    let anchor = henry_gas_ppm(0.09, 25.0).map_err(|e| e.to_string())?;
    ensure(anchor == 0.09, format!("henry(0.09) = {anchor:e}"))?;
    let k = henry_gas_ppm(600.0, 25.0).unwrap() / 600.0;
    let mut worst = 0.0f64;
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let grid = (0..=6000).map(|i| i as f64 * 0.1).chain((0..1000).map(|_| rng.gen_range(0.0..600.0)));
    for x in grid {
        let h = henry_gas_ppm(x, 25.0).unwrap();
        if x > 0.0 {
            worst = worst.max((h - k * x).abs() / h);
        } else {
            ensure(h == 0.0, "henry(0) != 0")?;
        }
    }
    ensure(worst <= HENRY_LINEARITY_REL, format!("worst relative deviation {worst:e}"))?;
    Ok(format!("henry(0.09 mg/dL, 25 C) = {anchor} ppm; worst linearity deviation {worst:.1e}"))
}

fn calibration_recovery() -> Check {
    let cfg = ScenarioConfig::new(ScenarioKind::CalibrationRoutine);
    // configured sensitivity: nA/ppm through the reference transimpedance into counts
    let r_ref = GainTable::default().resistance(cfg.device.norm_gain_index).unwrap();
    let truth = cfg.sensor.fuel_cell.sensitivity_na_per_ppm * 1e-9 * r_ref / 3.0 * 4095.0;
    let t = Instant::now();
    let rep = run_calibration(&cfg.calibration, &cfg.sensor, &cfg.device, cfg.seed).map_err(|e| e.to_string())?;
    let took = t.elapsed();
    let slope = rep.curve.slope_counts_per_ppm;
    let err = (slope - truth).abs() / truth;
    ensure(err < CAL_SLOPE_REL, format!("slope {slope:.3} vs configured {truth:.3}"))?;
    ensure(rep.curve.fit_r2 >= CAL_MIN_R2, format!("R2 {}", rep.curve.fit_r2))?;
    ensure(took < CAL_MAX_RUNTIME, format!("took {took:?}"))?;
    Ok(format!(
        "slope {slope:.3} vs {truth:.3} counts/ppm ({:.3}%), R2 {:.6}, {} jars, {:.2?}",
        err * 100.0,
        rep.curve.fit_r2,
        rep.jars.len(),
        took
    ))
}

fn anchor_pairs() -> Check {
    let cal = CalibrationCurve::through((265.8, -0.07), (1340.6, 5.74), 7).map_err(|e| e.to_string())?;
    let table = GainTable::default();
    let lo = adc_to_ppm(265.8, 7, &cal, &table).map_err(|e| e.to_string())?;
    let hi = adc_to_ppm(1340.6, 7, &cal, &table).map_err(|e| e.to_string())?;
    ensure((lo + 0.07).abs() <= ANCHOR_PPM_TOL, format!("265.8 counts -> {lo}"))?;
    ensure((hi - 5.74).abs() <= ANCHOR_PPM_TOL, format!("1340.6 counts -> {hi}"))?;
    let oracle = (1340.6 - 265.8) / (5.74 - -0.07);
    let slope = cal.slope_counts_per_ppm;
    ensure((slope - oracle).abs() < 1e-9 && (slope - ANCHOR_SLOPE).abs() <= ANCHOR_SLOPE_TOL, format!("slope {slope}"))?;
    Ok(format!("265.8 -> {lo:.4} ppm, 1340.6 -> {hi:.4} ppm, slope {slope:.3} counts/ppm"))
}

fn baseline_correction() -> Check {
    let t0 = Instant::now();
    let tau = DriftParams::default().time_const_s;
    let cal = CalibrationCurve::through((265.8, -0.07), (1340.6, 5.74), 7).unwrap();
    let table = GainTable::default();
    let noise = Normal::new(0.0, NOISE_SD_COUNTS).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(42);
    let end = 4.0 * 3600.0;
    let t: Vec<f64> = (0..=end as usize).map(|s| s as f64).collect();
    let ppm: Vec<f64> = t
        .iter()
        .map(|&s| {
            let drift = DRIFT_PLATEAU_PPM * (1.0 - (-s / tau).exp());
            let counts = cal.counts_at(drift) + noise.sample(&mut rng);
            adc_to_ppm(counts, 7, &cal, &table).unwrap()
        })
        .collect();
    let plateau = (3600.0, end);
    let corrected = remove_baseline(&t, &ppm, &[plateau]).map_err(|e| e.to_string())?;
    let rms = |v: &[f64]| {
        let w: Vec<f64> = t.iter().zip(v).filter(|(s, _)| (plateau.0..=plateau.1).contains(*s)).map(|p| *p.1).collect();
        (w.iter().map(|x| x * x).sum::<f64>() / w.len() as f64).sqrt()
    };
    let (raw, fixed) = (rms(&ppm), rms(&corrected));
    let reduction = 1.0 - fixed / raw;
    let took = t0.elapsed();
    ensure(reduction >= MIN_RMS_REDUCTION, format!("RMS {raw:.3} -> {fixed:.3} ppm"))?;
    ensure(took < BASELINE_MAX_RUNTIME, format!("took {took:?}"))?;
    Ok(format!(
        "plateau RMS {raw:.3} -> {fixed:.3} ppm ({:.1}% reduction, tau {tau} s, {:.2?})",
        reduction * 100.0,
        took
    ))
}

fn random_record(rng: &mut ChaCha8Rng) -> FlashRecord {
    FlashRecord {
        rec_type: rng.gen(),
        rec_id: rng.gen(),
        v1: f32::from_bits(rng.gen()),
        v2: f32::from_bits(rng.gen()),
        v3: f32::from_bits(rng.gen()),
    }
}

fn codec_and_fifo(dir: &Path) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let recs: Vec<FlashRecord> = (0..CODEC_RECORDS).map(|_| random_record(&mut rng)).collect();
    for r in &recs {
        let bytes = r.encode();
        ensure(bytes.len() == RECORD_LEN, "record is not 16 bytes")?;
        let back = FlashRecord::decode(&bytes).map_err(|e| e.to_string())?;
        ensure(back.encode() == bytes, format!("round trip changed {r:?}"))?;
    }
    let slots = FlashFifo::in_memory(FLASH_BYTES).map_err(|e| e.to_string())?.slots();
    ensure(slots == FLASH_SLOTS && slots >= HUNDRED_DAYS_MIN, format!("{slots} slots"))?;

    let path = dir.join("flash.bin");
    {
        let mut f = FlashFifo::open(&path, FLASH_BYTES).map_err(|e| e.to_string())?;
        for r in &recs {
            f.append(r).map_err(|e| e.to_string())?;
        }
    }
    let f = FlashFifo::open(&path, FLASH_BYTES).map_err(|e| e.to_string())?;
    let back: Vec<FlashRecord> = f.iter().collect();
    ensure(back.len() == recs.len() && back.iter().zip(&recs).all(|(a, b)| a.bit_eq(b)), "persisted image differs")?;

    // a wrapped ring survives reopening too
    let small = dir.join("small.bin");
    let cap = 64 * RECORD_LEN as u64;
    {
        let mut f = FlashFifo::open(&small, cap).map_err(|e| e.to_string())?;
        for r in &recs[..200] {
            f.append(r).map_err(|e| e.to_string())?;
        }
    }
    let f = FlashFifo::open(&small, cap).map_err(|e| e.to_string())?;
    let kept: Vec<FlashRecord> = f.iter().collect();
    ensure(kept.len() == 64 && kept.iter().zip(&recs[136..]).all(|(a, b)| a.bit_eq(b)), "wrapped image differs")?;
    Ok(format!(
        "{CODEC_RECORDS} random records round-trip; {slots} slots = {} days of minutes; 8 MiB and wrapped images reopen bit-exact",
        slots / 1440
    ))
}

fn auto_gain() -> Check {
    let table = GainTable::default();
    let r_min = table.resistance(0).unwrap();
    let r_max = table.resistance(7).unwrap();
    let na_for = |counts: f64, r: f64| counts / 4095.0 * 3.0 / r * 1e9;
    // top of the ramp is the largest current still in band at the lowest gain
    let top = na_for(BAND.1 as f64 - 1.0, r_min);
    let floor = na_for(BAND.0 as f64, r_max);
    let mut emu = Emulator::new(DeviceConfig { env_sensor_error: false, ..DeviceConfig::named("TAC-01") })
        .map_err(|e| e.to_string())?;
    let n = 3600usize;
    let ramp: Vec<f64> = (0..n).map(|k| top * k as f64 / (n - 1) as f64).collect();
    let mut currents = ramp.clone();
    currents.extend(ramp.iter().rev());
    let (mut excursions, mut switches, mut worst_run, mut run) = (0usize, 0usize, 0usize, 0usize);
    let mut prev_gain = emu.gain_index();
    for &na in &currents {
        let s = emu
            .tick(Some(AnalogInput { current_na: na, temp_c: 30.0, rh_pct: 50.0 }))
            .map_err(|e| e.to_string())?
            .ok_or("no sample")?;
        if emu.gain_index() != prev_gain {
            switches += 1;
            prev_gain = emu.gain_index();
        }
        // below the floor no gain can bring the reading into band
        let reachable = na >= floor;
        if reachable && !(BAND.0..=BAND.1).contains(&s.adc_counts) {
            excursions += 1;
            run += 1;
            worst_run = worst_run.max(run);
        } else {
            run = 0;
        }
    }
    ensure(worst_run <= 1, format!("{worst_run} consecutive out-of-band ticks"))?;
    ensure(worst_run < MAX_RECOVERY_TICKS, "no recovery")?;
    ensure(switches >= 14, format!("only {switches} gain switches over the up/down ramp"))?;
    Ok(format!(
        "0 -> {:.3} mA -> 0 over {} ticks: {switches} switches, {excursions} single-tick excursions, recovery {} tick(s)",
        top * 1e-6,
        currents.len(),
        worst_run
    ))
}

fn backfill_timestamps(dir: &Path) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for _ in 0..100_000 {
        let now: i64 = rng.gen_range(0..4_000_000_000) * NS_PER_S;
        let latest: u16 = rng.gen();
        let back: u16 = rng.gen_range(0..32_768);
        let id = latest.wrapping_sub(back);
        let oracle = now - 60 * NS_PER_S * i64::from(back);
        let got = record_timestamp(now, latest, id);
        ensure(got == Some(oracle), format!("T={now} L={latest} i={id}: {got:?} vs {oracle}"))?;
    }

    let svc = ServiceHandle::start(SocketAddr::from(([127, 0, 0, 1], 0)), &dir.join("svc")).map_err(|e| e.to_string())?;
    let emu = Arc::new(Mutex::new(Emulator::new(DeviceConfig::named("TAC-07")).map_err(|e| e.to_string())?));
    let zero = FuelCellParams::default().zero_current_na;
    let minutes = 300u64;
    for _ in 0..minutes * 60 {
        emu.lock().tick(Some(AnalogInput { current_na: zero, temp_c: 30.0, rh_pct: 45.0 })).unwrap();
    }
    let now = VirtualClock::DEFAULT_EPOCH_NS + minutes as i64 * 60 * NS_PER_S;
    let clock = Arc::new(VirtualClock::new(now));
    let gateway = |ledger: BackfillLedger| {
        let (link, _) = SimLink::connect(emu.clone());
        let up = Uploader::new("TAC-07", Box::new(HttpSink::new(&svc.url())), Spool::in_memory(), LocalCsv::disabled());
        DeviceSession::new(DeviceClient::new(link), up, ledger, clock.clone())
    };
    let mut s = gateway(BackfillLedger::in_memory("TAC-07"));
    let first = s.backfill(now).map_err(|e| e.to_string())?;
    ensure(s.flush(true).map_err(|e| e.to_string())?, "first upload failed")?;
    let stored = svc.store().count("TAC-07");

    // same gateway again, then a fresh gateway that lost its ledger
    let again = s.backfill(now).map_err(|e| e.to_string())?;
    s.flush(true).map_err(|e| e.to_string())?;
    let mut fresh = gateway(BackfillLedger::in_memory("TAC-07"));
    let redo = fresh.backfill(now).map_err(|e| e.to_string())?;
    fresh.flush(true).map_err(|e| e.to_string())?;
    let after = svc.store().count("TAC-07");
    let dup = fresh.uploader().stats().duplicates;

    let latest = first.latest_id.ok_or("no records")?;
    let recs: Vec<FlashRecord> = emu.lock().fifo().iter().collect();
    let pts = svc.store().query("TAC-07", i64::MIN, i64::MAX, Some(Source::Backfill));
    svc.shutdown();
    ensure(recs.len() == minutes as usize && pts.len() == recs.len(), format!("{} records, {} points", recs.len(), pts.len()))?;
    for (r, p) in recs.iter().zip(&pts) {
        let want = now - 60 * NS_PER_S * i64::from(latest.wrapping_sub(r.rec_id));
        ensure(p.t_ns == want && p.alcohol_raw == widen(r.v1), format!("record {} stored as {p:?}", r.rec_id))?;
    }
    ensure(again.points == 0, format!("repeat backfill re-sent {}", again.points))?;
    ensure(after == stored, format!("service grew from {stored} to {after}"))?;
    Ok(format!(
        "1e5 random (T, L, i) match T - 60 s (L - i); {stored} points stored; re-run sent {} and a ledger-less re-run sent {} ({dup} rejected), 0 added",
        again.points, redo.points
    ))
}

fn end_to_end(dir: &Path) -> Check {
    let mut lines = Vec::new();
    let mut aucs = Vec::new();
    for kind in [ScenarioKind::OneDrink, ScenarioKind::TwoDrink] {
        let t = Instant::now();
        let out = run_session(&ScenarioConfig::new(kind), &dir.join(kind.as_str())).map_err(|e| e.to_string())?;
        let took = t.elapsed();
        let m = &out.report.arms[0];
        let bac_peak = m.bac.and_then(|b| b.peak_time_s).ok_or("no BAC peak")?;
        let tac_peak = m.tacg_corrected.peak_time_s.ok_or("no TACg peak")?;
        ensure(took < SESSION_MAX_RUNTIME, format!("{} took {took:?}", kind.as_str()))?;
        if kind == ScenarioKind::OneDrink {
            ensure(tac_peak > bac_peak, format!("TACg peak {tac_peak} s not after BAC peak {bac_peak} s"))?;
            lines.push(format!("one drink: BAC peak {bac_peak} s, TACg peak {tac_peak} s"));
        }
        aucs.push(m.tacg_corrected.auc);
        lines.push(format!("{} {:.2?}", kind.as_str(), took));
    }
    ensure(aucs[1] > aucs[0], format!("two-drink AUC {:.1} <= one-drink {:.1}", aucs[1], aucs[0]))?;
    lines.push(format!("TACg AUC {:.1} (two) > {:.1} (one) ppm.min", aucs[1], aucs[0]));
    Ok(lines.join("; "))
}

fn variability(dir: &Path) -> Check {
    let cfg = ScenarioConfig::new(ScenarioKind::ClothingComparison);
    let out = run_session(&cfg, dir).map_err(|e| e.to_string())?;
    let c = out.report.comparisons.first().ok_or("no comparison")?;
    let bac = c.bac_auc_ratio.ok_or("no BAC ratio")?;
    let tac = c.tacg_auc_ratio_corrected.ok_or("no TACg ratio")?;
    ensure((BAC_RATIO_BAND.0..=BAC_RATIO_BAND.1).contains(&bac), format!("BAC ratio {bac:.3}"))?;
    ensure(!(TACG_RATIO_EXCLUDED.0..=TACG_RATIO_EXCLUDED.1).contains(&tac), format!("TACg ratio {tac:.3}"))?;
    Ok(format!(
        "{} / {}: BAC AUC ratio {bac:.3}, TACg AUC ratio {tac:.3} (raw {:.3})",
        c.a,
        c.b,
        c.tacg_auc_ratio_raw.unwrap_or(f64::NAN)
    ))
}

fn random_outages(rng: &mut ChaCha8Rng, cfg: &ScenarioConfig) -> Vec<Outage> {
    let end = cfg.total_duration_s();
    let kinds = [OutageKind::Service, OutageKind::Link, OutageKind::Gateway];
    let mut out: Vec<Outage> = Vec::new();
    let n = rng.gen_range(1..=4);
    while out.len() < n {
        let start_s = rng.gen_range(60..end - 3600);
        let duration_s = rng.gen_range(1..2400);
        let clash = out.iter().any(|o| start_s < o.start_s + o.duration_s + 60 && o.start_s < start_s + duration_s + 60);
        if !clash {
            out.push(Outage { kind: kinds[rng.gen_range(0..3)], start_s, duration_s, arm: None });
        }
    }
    out
}

fn integrity(dir: &Path) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(2024);
    let mut summary = Vec::new();
    for round in 0..OUTAGE_SCHEDULES {
        let mut cfg = ScenarioConfig::new(ScenarioKind::OneDrink);
        cfg.seed = round as u64;
        cfg.duration_s = Some(6 * 3600);
        cfg.outages = random_outages(&mut rng, &cfg);
        cfg.validate().map_err(|e| e.to_string())?;
        let run = run_pipeline(&cfg, &dir.join(format!("round{round}"))).map_err(|e| e.to_string())?;
        for arm in &run.arms {
            let i = &arm.integrity;
            let ctx = format!("round {round} {:?}", cfg.outages);
            ensure(i.exactly_once(), format!("{ctx}: {i:?}"))?;
            ensure(arm.flash.len() == arm.backfill.len(), format!("{ctx}: flash {} vs service {}", arm.flash.len(), arm.backfill.len()))?;
            for (r, p) in arm.flash.iter().zip(&arm.backfill) {
                ensure(widen(r.v1) == p.alcohol_raw, format!("{ctx}: record {} mismatched", r.rec_id))?;
            }
            let ids: HashSet<u16> = arm.flash.iter().map(|r| r.rec_id).collect();
            let stamps: HashSet<i64> = arm.backfill.iter().map(|p| p.t_ns).collect();
            let live: HashSet<i64> = arm.realtime.iter().map(|p| p.t_ns).collect();
            ensure(ids.len() == arm.flash.len(), format!("{ctx}: repeated record ids"))?;
            ensure(stamps.len() == arm.backfill.len() && live.len() == arm.realtime.len(), format!("{ctx}: duplicate points"))?;
            summary.push(format!(
                "{}x outage: {} records/{} live ok",
                cfg.outages.len(),
                i.flash_records,
                i.realtime_pushes
            ));
        }
    }
    Ok(summary.join("; "))
}

fn main() -> ExitCode {
    let tmp = tempfile::tempdir().expect("tempdir");
    let d = tmp.path();
    let criteria: Vec<Criterion> = vec![
        ("henry anchor", Box::new(henry_anchor)),
        ("calibration recovery", Box::new(calibration_recovery)),
        ("calibration anchors", Box::new(anchor_pairs)),
        ("baseline correction", Box::new(baseline_correction)),
        ("record codec + fifo", Box::new(|| codec_and_fifo(d))),
        ("auto-gain", Box::new(auto_gain)),
        ("backfill timestamping", Box::new(|| backfill_timestamps(&d.join("backfill")))),
        ("end-to-end session", Box::new(|| end_to_end(&d.join("e2e")))),
        ("variability direction", Box::new(|| variability(&d.join("clothing")))),
        ("pipeline integrity", Box::new(|| integrity(&d.join("integrity")))),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let res = catch_unwind(AssertUnwindSafe(check)).unwrap_or_else(|p| {
            Err(p.downcast_ref::<String>().cloned().or(p.downcast_ref::<&str>().map(|s| s.to_string())).unwrap_or_default())
        });
        match res {
            Ok(detail) => println!("PASS {:>2} {name}: {detail}", i + 1),
            Err(why) => {
                failed += 1;
                println!("FAIL {:>2} {name}: {why}", i + 1);
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
