//! Lockstep end-to-end run: emulators -> gateway sessions -> HTTP service,
//! all on one virtual clock.
//!
//! Each virtual second every emulator ticks, the clock advances and every
//! live gateway session polls its link. Sessions flush full batches once a
//! minute and download flash hourly, on reconnect and at the end.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::clock::{Clock, VirtualClock};
use crate::device::{AnalogInput, DeviceConfig, Emulator, FlashRecord};
use crate::gateway::{
    BackfillLedger, DeviceClient, DeviceSession, HttpSink, IdGap, SimLink, SimLinkControl, StreamEvent, Uploader,
};
use crate::physio::{simulate_session, SessionTrace};
use crate::schema::{PointRecord, Source};
use crate::service::ServiceHandle;

use super::config::{OutageKind, ScenarioConfig};
use super::HarnessError;

const BACKFILL_INTERVAL_S: u64 = 3600;
const FLUSH_INTERVAL_S: u64 = 60;

/// Reconciliation of what the device produced against what the service holds.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Integrity {
    pub flash_records: usize,
    pub service_backfill_points: usize,
    pub realtime_pushes: u64,
    pub service_realtime_points: usize,
    /// Points the service rejected as already stored.
    pub duplicates_rejected: usize,
    pub failed_upload_attempts: usize,
    pub gaps: Vec<IdGap>,
    pub reconnects: u32,
}

impl Integrity {
    pub fn exactly_once(&self) -> bool {
        self.flash_records == self.service_backfill_points
            && self.realtime_pushes == self.service_realtime_points as u64
            && self.gaps.is_empty()
    }
}

pub struct ArmRun {
    pub name: String,
    pub device: String,
    pub trace: SessionTrace,
    /// Backfilled minute records as stored by the service.
    pub backfill: Vec<PointRecord>,
    pub realtime: Vec<PointRecord>,
    /// Flash contents of the emulator at the end of the run.
    pub flash: Vec<FlashRecord>,
    pub export_csv: String,
    pub integrity: Integrity,
}

pub struct PipelineRun {
    pub epoch_ns: i64,
    pub arms: Vec<ArmRun>,
}

struct Arm {
    device: String,
    emu: Arc<Mutex<Emulator>>,
    ctl: Option<SimLinkControl>,
    session: Option<DeviceSession<SimLink>>,
    link_down: bool,
    gaps: Vec<IdGap>,
    duplicates: usize,
    failed: usize,
    reconnects: u32,
}

fn rt<E: std::fmt::Display>(context: &str) -> impl FnOnce(E) -> HarnessError + '_ {
    move |e| HarnessError::Runtime(format!("{context}: {e}"))
}

struct Env<'a> {
    cfg: &'a ScenarioConfig,
    clock: VirtualClock,
    url: String,
    gw_dir: PathBuf,
}

impl Env<'_> {
    fn open_session(&self, arm: &mut Arm) -> Result<(), HarnessError> {
        let (link, ctl) = SimLink::connect(arm.emu.clone());
        let uploader = Uploader::with_dir(&arm.device, Box::new(HttpSink::new(&self.url)), &self.gw_dir)
            .map_err(rt("gateway spool"))?
            .batch_size(self.cfg.batch_size);
        let ledger = BackfillLedger::load(&self.gw_dir, &arm.device).map_err(rt("gateway ledger"))?;
        let mut session = DeviceSession::new(DeviceClient::new(link), uploader, ledger, Arc::new(self.clock.clone()));
        session.client().set_time_ref(self.clock.now_ns()).map_err(rt("set time"))?;
        session.start_stream().map_err(rt("subscribe"))?;
        arm.ctl = Some(ctl);
        arm.session = Some(session);
        Ok(())
    }

    fn relink(&self, arm: &mut Arm) -> Result<(), HarnessError> {
        let (link, ctl) = SimLink::connect(arm.emu.clone());
        let session = arm.session.as_mut().expect("live session");
        session.reconnect(DeviceClient::new(link));
        session.start_stream().map_err(rt("resubscribe"))?;
        arm.ctl = Some(ctl);
        arm.link_down = false;
        arm.reconnects += 1;
        Ok(())
    }

    fn backfill(&self, arm: &mut Arm) -> Result<(), HarnessError> {
        let Some(session) = arm.session.as_mut() else { return Ok(()) };
        let report = session.backfill(self.clock.now_ns()).map_err(rt("backfill"))?;
        arm.gaps.extend(report.gaps);
        Ok(())
    }

    fn kill_gateway(&self, arm: &mut Arm) {
        if let Some(ctl) = arm.ctl.take() {
            ctl.disconnect();
        }
        if let Some(s) = arm.session.take() {
            let st = s.uploader().stats();
            arm.duplicates += st.duplicates;
            arm.failed += st.failed_attempts;
        }
    }
}

fn get_json<T: serde::de::DeserializeOwned>(url: &str) -> Result<T, HarnessError> {
    ureq::get(url)
        .call()
        .map_err(rt("service query"))?
        .body_mut()
        .read_json::<T>()
        .map_err(rt("service query"))
}

fn get_text(url: &str) -> Result<String, HarnessError> {
    ureq::get(url)
        .call()
        .map_err(rt("service export"))?
        .body_mut()
        .read_to_string()
        .map_err(rt("service export"))
}

fn simulate_all(cfg: &ScenarioConfig) -> Result<Vec<SessionTrace>, HarnessError> {
    (0..cfg.arms.len())
        .map(|i| simulate_session(&cfg.session_config(i)).map_err(|e| HarnessError::Validation(e.to_string())))
        .collect()
}

/// Runs the scenario end to end. Scratch state (service data, gateway spool)
/// lives in `<work_dir>`, which is wiped first so reruns are identical.
pub fn run_pipeline(cfg: &ScenarioConfig, work_dir: &Path) -> Result<PipelineRun, HarnessError> {
    cfg.validate()?;
    let traces = simulate_all(cfg)?;
    if work_dir.exists() {
        std::fs::remove_dir_all(work_dir).map_err(rt("clear work dir"))?;
    }
    let svc_dir = work_dir.join("service");
    let gw_dir = work_dir.join("gateway");
    let clock = VirtualClock::default();
    let epoch_ns = clock.now_ns();
    let loopback: SocketAddr = "127.0.0.1:0".parse().expect("literal");
    let mut service = Some(ServiceHandle::start(loopback, &svc_dir).map_err(rt("service startup"))?);
    let addr = service.as_ref().expect("started").addr();
    let env = Env { cfg, clock: clock.clone(), url: format!("http://{addr}"), gw_dir };

    let mut arms = Vec::with_capacity(cfg.arms.len());
    for i in 0..cfg.arms.len() {
        let device = cfg.device_name(i);
        let dcfg = DeviceConfig {
            name: device.clone(),
            flash_path: None,
            seed: cfg.device.seed.wrapping_add(i as u64),
            ..cfg.device.clone()
        };
        let emu = Emulator::new(dcfg).map_err(|e| HarnessError::Validation(e.to_string()))?;
        let mut arm = Arm {
            device,
            emu: Arc::new(Mutex::new(emu)),
            ctl: None,
            session: None,
            link_down: false,
            gaps: Vec::new(),
            duplicates: 0,
            failed: 0,
            reconnects: 0,
        };
        env.open_session(&mut arm)?;
        arms.push(arm);
    }

    // (second, start?, outage index)
    let mut events: BTreeMap<u64, Vec<(bool, usize)>> = BTreeMap::new();
    for (k, o) in cfg.outages.iter().enumerate() {
        events.entry(o.start_s).or_default().push((true, k));
        events.entry(o.start_s + o.duration_s).or_default().push((false, k));
    }
    let affects = |k: usize, idx: usize| cfg.outages[k].arm.as_ref().is_none_or(|a| *a == cfg.arms[idx].name);

    let duration = cfg.total_duration_s();
    for s in 0..duration {
        for &(starting, k) in events.get(&s).map(Vec::as_slice).unwrap_or(&[]) {
            let kind = cfg.outages[k].kind;
            tracing::info!(t_s = s, ?kind, starting, "outage");
            match (kind, starting) {
                (OutageKind::Service, true) => {
                    if let Some(h) = service.take() {
                        h.shutdown();
                    }
                }
                (OutageKind::Service, false) => {
                    if service.is_none() {
                        service = Some(ServiceHandle::start(addr, &svc_dir).map_err(rt("service restart"))?);
                    }
                }
                (OutageKind::Link, true) => {
                    for (_, arm) in arms.iter_mut().enumerate().filter(|(i, _)| affects(k, *i)) {
                        if let Some(ctl) = arm.ctl.take() {
                            ctl.disconnect();
                            arm.link_down = true;
                        }
                    }
                }
                (OutageKind::Link, false) => {
                    for (_, arm) in arms.iter_mut().enumerate().filter(|(i, _)| affects(k, *i)) {
                        if arm.link_down && arm.session.is_some() {
                            env.relink(arm)?;
                            env.backfill(arm)?;
                        }
                    }
                }
                (OutageKind::Gateway, true) => {
                    for (_, arm) in arms.iter_mut().enumerate().filter(|(i, _)| affects(k, *i)) {
                        env.kill_gateway(arm);
                    }
                }
                (OutageKind::Gateway, false) => {
                    for (_, arm) in arms.iter_mut().enumerate().filter(|(i, _)| affects(k, *i)) {
                        if arm.session.is_none() {
                            env.open_session(arm)?;
                            arm.link_down = false;
                            arm.reconnects += 1;
                            env.backfill(arm)?;
                        }
                    }
                }
            }
        }

        for (arm, trace) in arms.iter().zip(&traces) {
            let r = &trace.rows[s as usize];
            arm.emu
                .lock()
                .tick(Some(AnalogInput { current_na: r.current_na, temp_c: r.temp_c, rh_pct: r.rh_pct }))
                .map_err(rt("emulator"))?;
        }
        clock.advance_s(1);

        let elapsed = s + 1;
        for arm in arms.iter_mut() {
            let live = !arm.link_down;
            let Some(session) = arm.session.as_mut() else { continue };
            if live {
                if let StreamEvent::Disconnected = session.poll(Duration::ZERO).map_err(rt("poll"))? {
                    arm.link_down = true;
                }
            }
            if elapsed % FLUSH_INTERVAL_S == 0 {
                session.flush(false).map_err(rt("upload"))?;
            }
        }
        if elapsed % BACKFILL_INTERVAL_S == 0 && elapsed < duration {
            for arm in arms.iter_mut().filter(|a| !a.link_down) {
                env.backfill(arm)?;
                if let Some(session) = arm.session.as_mut() {
                    session.flush(false).map_err(rt("upload"))?;
                }
            }
        }
    }

    if service.is_none() {
        service = Some(ServiceHandle::start(addr, &svc_dir).map_err(rt("service restart"))?);
    }
    for arm in arms.iter_mut() {
        if arm.session.is_none() {
            env.open_session(arm)?;
        } else if arm.link_down {
            env.relink(arm)?;
        }
        env.backfill(arm)?;
        let session = arm.session.as_mut().expect("live session");
        if !session.flush(true).map_err(rt("upload"))? || session.uploader().pending() > 0 {
            return Err(HarnessError::Runtime(format!("{}: final upload did not drain the spool", arm.device)));
        }
    }

    let mut out = Vec::with_capacity(arms.len());
    for ((mut arm, trace), acfg) in arms.into_iter().zip(traces).zip(&cfg.arms) {
        let q = |source: &str| format!("{}/query?device={}&source={source}", env.url, arm.device);
        let backfill: Vec<PointRecord> = get_json(&q("backfill"))?;
        let realtime: Vec<PointRecord> = get_json(&q("realtime"))?;
        let export_csv = get_text(&format!("{}/export.csv?device={}", env.url, arm.device))?;
        // shutdown order: gateway, then device
        env.kill_gateway(&mut arm);
        let emu = arm.emu.lock();
        let integrity = Integrity {
            flash_records: emu.fifo().len() as usize,
            service_backfill_points: backfill.iter().filter(|p| p.source == Source::Backfill).count(),
            realtime_pushes: emu.pushes_sent(),
            service_realtime_points: realtime.len(),
            duplicates_rejected: arm.duplicates,
            failed_upload_attempts: arm.failed,
            gaps: arm.gaps.clone(),
            reconnects: arm.reconnects,
        };
        let flash = emu.fifo().iter().collect();
        drop(emu);
        out.push(ArmRun {
            name: acfg.name.clone(),
            device: arm.device,
            trace,
            backfill,
            realtime,
            flash,
            export_csv,
            integrity,
        });
    }
    if let Some(h) = service.take() {
        h.shutdown();
    }
    Ok(PipelineRun { epoch_ns, arms: out })
}
