//! One device session: realtime stream plus flash backfill feeding a single
//! ordered uploader.

use std::sync::Arc;
use std::time::Duration;

use serde::Serialize;

use crate::clock::Clock;
use crate::device::protocol::NakCode;
use crate::schema::{widen, Source, TimestampedPoint, WriteBatch};

use super::backfill::{find_gaps, record_point, record_timestamp, BackfillLedger, IdGap, MAX_BACKFILL_SPAN};
use super::client::DeviceClient;
use super::transport::Transport;
use super::uploader::Uploader;
use super::GatewayError;

/// Records requested per FLASH_READ.
const DUMP_CHUNK: u16 = 1440;

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct BackfillReport {
    pub latest_id: Option<u16>,
    pub from_id: Option<u16>,
    pub points: usize,
    pub gaps: Vec<IdGap>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StreamEvent {
    Points(usize),
    Disconnected,
}

pub struct DeviceSession<T: Transport> {
    device: String,
    client: DeviceClient<T>,
    uploader: Uploader,
    ledger: BackfillLedger,
    clock: Arc<dyn Clock>,
    last_realtime_ns: i64,
    connected: bool,
    service_down: bool,
}

impl<T: Transport> DeviceSession<T> {
    pub fn new(client: DeviceClient<T>, uploader: Uploader, ledger: BackfillLedger, clock: Arc<dyn Clock>) -> Self {
        Self {
            device: uploader.device().to_string(),
            client,
            uploader,
            ledger,
            clock,
            last_realtime_ns: i64::MIN,
            connected: true,
            service_down: false,
        }
    }

    pub fn device(&self) -> &str {
        &self.device
    }

    pub fn uploader(&self) -> &Uploader {
        &self.uploader
    }

    pub fn is_connected(&self) -> bool {
        self.connected
    }

    pub fn client(&mut self) -> &mut DeviceClient<T> {
        &mut self.client
    }

    /// Swaps in a fresh link after a disconnect; spool and ledger carry over.
    pub fn reconnect(&mut self, client: DeviceClient<T>) {
        self.client = client;
        self.connected = true;
    }

    pub fn start_stream(&mut self) -> Result<(), GatewayError> {
        self.guard(|s| s.client.subscribe())
    }

    fn guard<R>(&mut self, f: impl FnOnce(&mut Self) -> Result<R, GatewayError>) -> Result<R, GatewayError> {
        let r = f(self);
        if matches!(r, Err(GatewayError::Disconnected)) {
            self.connected = false;
        }
        r
    }

    /// Stamps pushed measurements with the gateway clock and queues them.
    /// Stamps are kept strictly increasing so a burst never collides.
    pub fn poll(&mut self, wait: Duration) -> Result<StreamEvent, GatewayError> {
        let ms = match self.client.poll_measurements(wait) {
            Ok(ms) => ms,
            Err(GatewayError::Disconnected) => {
                self.connected = false;
                return Ok(StreamEvent::Disconnected);
            }
            Err(e) => return Err(e),
        };
        let now = self.clock.now_ns();
        for m in &ms {
            let t_ns = now.max(self.last_realtime_ns.saturating_add(1));
            self.last_realtime_ns = t_ns;
            self.uploader.enqueue(TimestampedPoint {
                t_ns,
                device: self.device.clone(),
                alcohol_raw: widen(m.alcohol),
                temp_c: widen(m.temp_c),
                rh_pct: widen(m.rh_pct),
                source: Source::Realtime,
            })?;
        }
        Ok(StreamEvent::Points(ms.len()))
    }

    /// Sends spooled batches. A service failure leaves points spooled and is
    /// reported as `false`, not as an error.
    pub fn flush(&mut self, force: bool) -> Result<bool, GatewayError> {
        match self.uploader.flush(force) {
            Ok(()) => {
                if std::mem::take(&mut self.service_down) {
                    tracing::info!(device = %self.device, "service reachable again");
                }
                Ok(true)
            }
            Err(GatewayError::Service(e)) => {
                if !std::mem::replace(&mut self.service_down, true) {
                    tracing::warn!(device = %self.device, "service unavailable, points stay spooled: {e}");
                }
                Ok(false)
            }
            Err(e) => Err(e),
        }
    }

    /// Downloads records not yet handed to the uploader and stamps them
    /// against `now_ns`. Safe to repeat: the ledger skips uploaded ids.
    pub fn backfill(&mut self, now_ns: i64) -> Result<BackfillReport, GatewayError> {
        self.guard(|s| s.backfill_inner(now_ns))
    }

    fn backfill_inner(&mut self, now_ns: i64) -> Result<BackfillReport, GatewayError> {
        let info = self.client.get_info()?.info;
        let mut report = BackfillReport::default();
        if !info.has_records {
            return Ok(report);
        }
        let latest = info.latest_rec_id;
        let oldest = info.oldest_rec_id;
        report.latest_id = Some(latest);
        let retained = latest.wrapping_sub(oldest);
        let mut start = match self.ledger.last_id {
            Some(h) if h == latest => return Ok(report),
            Some(h) if latest.wrapping_sub(h) <= retained => h.wrapping_add(1),
            Some(h) => {
                if h.wrapping_add(1) != oldest {
                    report.gaps.push(IdGap { from_id: h.wrapping_add(1), to_id: oldest.wrapping_sub(1) });
                }
                oldest
            }
            None => oldest,
        };
        if latest.wrapping_sub(start) >= MAX_BACKFILL_SPAN {
            let clipped = latest.wrapping_sub(MAX_BACKFILL_SPAN - 1);
            report.gaps.push(IdGap { from_id: start, to_id: clipped.wrapping_sub(1) });
            start = clipped;
        }
        report.from_id = Some(start);

        let mut retried_window = false;
        loop {
            let remaining = latest.wrapping_sub(start);
            let to = start.wrapping_add(remaining.min(DUMP_CHUNK - 1));
            let records = match self.client.flash_read(start, to) {
                Ok(r) => r,
                Err(GatewayError::Nak { code, window: Some((o, _)) })
                    if code == NakCode::NotRetained as u8 && !retried_window =>
                {
                    // evicted since GET_INFO: skip ahead to what is left
                    retried_window = true;
                    report.gaps.push(IdGap { from_id: start, to_id: o.wrapping_sub(1) });
                    start = o;
                    continue;
                }
                Err(e) => return Err(e),
            };
            report.gaps.extend(find_gaps(start, to, &records));
            for rec in &records {
                if let Some(t) = record_timestamp(now_ns, latest, rec.rec_id) {
                    self.uploader.enqueue(record_point(&self.device, rec, t))?;
                    report.points += 1;
                }
            }
            self.ledger.set(to)?;
            if to == latest {
                break;
            }
            start = to.wrapping_add(1);
        }
        Ok(report)
    }
}

/// Serializes a single-source batch in the service write schema.
pub fn to_json_points(device: &str, points: &[TimestampedPoint]) -> Result<String, GatewayError> {
    let Some(first) = points.first() else {
        return Err(GatewayError::EmptyBatch);
    };
    if points.iter().any(|p| p.source != first.source) {
        return Err(GatewayError::MixedSources);
    }
    if points.iter().any(|p| p.device != device) {
        return Err(GatewayError::Config(format!("batch contains points from devices other than {device}")));
    }
    let batch = WriteBatch { device: device.to_string(), points: points.iter().map(TimestampedPoint::record).collect() };
    Ok(serde_json::to_string(&batch).expect("batch serializes"))
}
