//! Timestamp reconstruction for flash records and the per-device upload
//! ledger that makes repeated downloads idempotent.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::clock::NS_PER_S;
use crate::device::record::FlashRecord;
use crate::schema::{widen, Source, TimestampedPoint};

/// Ids are one minute apart.
pub const RECORD_PERIOD_NS: i64 = 60 * NS_PER_S;
/// Largest id distance treated as unambiguous on the 16-bit ring.
pub const MAX_BACKFILL_SPAN: u16 = 32_768;

/// `now − 60 s · (latest − id)` with wrap-aware subtraction; `None` when the
/// record is too far back to place unambiguously.
pub fn record_timestamp(now_ns: i64, latest_id: u16, rec_id: u16) -> Option<i64> {
    let d = latest_id.wrapping_sub(rec_id);
    (d < MAX_BACKFILL_SPAN).then(|| now_ns - RECORD_PERIOD_NS * i64::from(d))
}

pub fn record_point(device: &str, rec: &FlashRecord, t_ns: i64) -> TimestampedPoint {
    TimestampedPoint {
        t_ns,
        device: device.to_string(),
        alcohol_raw: widen(rec.v1),
        temp_c: widen(rec.v2),
        rh_pct: widen(rec.v3),
        source: Source::Backfill,
    }
}

/// Inclusive id range missing from a download.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct IdGap {
    pub from_id: u16,
    pub to_id: u16,
}

/// Ids in `[from_id, to_id]` absent from `records` (which are in ring order).
pub fn find_gaps(from_id: u16, to_id: u16, records: &[FlashRecord]) -> Vec<IdGap> {
    let mut gaps = Vec::new();
    let mut expect = from_id;
    let mut done = false;
    for r in records {
        if r.rec_id != expect {
            gaps.push(IdGap { from_id: expect, to_id: r.rec_id.wrapping_sub(1) });
        }
        if r.rec_id == to_id {
            done = true;
        }
        expect = r.rec_id.wrapping_add(1);
    }
    if !done && expect != to_id.wrapping_add(1) {
        gaps.push(IdGap { from_id: expect, to_id });
    }
    gaps
}

/// Highest id already handed to the uploader, persisted per device.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BackfillLedger {
    pub device: String,
    pub last_id: Option<u16>,
    #[serde(skip)]
    path: Option<PathBuf>,
}

impl BackfillLedger {
    pub fn file(dir: &Path, device: &str) -> PathBuf {
        dir.join(format!("{device}.backfill.json"))
    }

    pub fn in_memory(device: &str) -> Self {
        Self { device: device.to_string(), last_id: None, path: None }
    }

    pub fn load(dir: &Path, device: &str) -> std::io::Result<Self> {
        let path = Self::file(dir, device);
        let mut ledger = match std::fs::read(&path) {
            Ok(bytes) => serde_json::from_slice(&bytes)
                .map_err(|e| std::io::Error::new(std::io::ErrorKind::InvalidData, e))?,
            Err(e) if e.kind() == std::io::ErrorKind::NotFound => Self::in_memory(device),
            Err(e) => return Err(e),
        };
        ledger.path = Some(path);
        Ok(ledger)
    }

    pub fn set(&mut self, last_id: u16) -> std::io::Result<()> {
        self.last_id = Some(last_id);
        if let Some(path) = &self.path {
            let tmp = path.with_extension("json.tmp");
            std::fs::write(&tmp, serde_json::to_vec(self)?)?;
            std::fs::rename(tmp, path)?;
        }
        Ok(())
    }
}
