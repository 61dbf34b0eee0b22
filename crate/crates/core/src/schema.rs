//! Point types shared by the gateway and the time-series service: the JSON
//! write payload and the CSV row layout.

use std::fmt;
use std::io::Write;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub const CSV_HEADER: &str = "t_ns,device,alcohol_raw,temp_c,rh_pct,source";

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Source {
    Realtime,
    Backfill,
}

impl Source {
    pub fn as_str(self) -> &'static str {
        match self {
            Source::Realtime => "realtime",
            Source::Backfill => "backfill",
        }
    }
}

impl fmt::Display for Source {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Source {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "realtime" => Ok(Source::Realtime),
            "backfill" => Ok(Source::Backfill),
            other => Err(format!("unknown source {other:?}")),
        }
    }
}

/// One point inside a write batch. Field order is part of the wire format.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PointRecord {
    pub t_ns: i64,
    pub alcohol_raw: f64,
    pub temp_c: f64,
    pub rh_pct: f64,
    pub source: Source,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WriteBatch {
    pub device: String,
    pub points: Vec<PointRecord>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct WriteResponse {
    pub accepted: usize,
    pub duplicates: usize,
}

/// A point with its device attached, as kept in local CSV and spool files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimestampedPoint {
    pub t_ns: i64,
    pub device: String,
    pub alcohol_raw: f64,
    pub temp_c: f64,
    pub rh_pct: f64,
    pub source: Source,
}

impl TimestampedPoint {
    pub fn record(&self) -> PointRecord {
        PointRecord {
            t_ns: self.t_ns,
            alcohol_raw: self.alcohol_raw,
            temp_c: self.temp_c,
            rh_pct: self.rh_pct,
            source: self.source,
        }
    }

    pub fn from_record(device: &str, p: &PointRecord) -> Self {
        Self {
            t_ns: p.t_ns,
            device: device.to_string(),
            alcohol_raw: p.alcohol_raw,
            temp_c: p.temp_c,
            rh_pct: p.rh_pct,
            source: p.source,
        }
    }
}

/// Widens a device float by its shortest decimal form, so 31.2f32 becomes
/// 31.2 rather than 31.200000762939453.
pub fn widen(v: f32) -> f64 {
    if v.is_finite() {
        v.to_string().parse().unwrap_or(f64::from(v))
    } else {
        f64::from(v)
    }
}

/// Device names travel in URLs, file names and a 17-byte frame.
pub fn valid_device_name(name: &str) -> bool {
    (1..=64).contains(&name.len())
        && name.bytes().all(|b| b.is_ascii_alphanumeric() || b == b'-' || b == b'_' || b == b'.')
        && !name.starts_with('.')
}

pub fn write_csv_row<W: Write>(w: &mut W, p: &TimestampedPoint) -> std::io::Result<()> {
    writeln!(w, "{},{},{},{},{},{}", p.t_ns, p.device, p.alcohol_raw, p.temp_c, p.rh_pct, p.source)
}

/// Parses rows written by [`write_csv_row`] (header included).
pub fn read_csv(text: &str) -> Result<Vec<TimestampedPoint>, String> {
    let mut rdr = csv::ReaderBuilder::new().has_headers(true).from_reader(text.as_bytes());
    let headers = rdr.headers().map_err(|e| e.to_string())?.clone();
    if headers.iter().collect::<Vec<_>>().join(",") != CSV_HEADER {
        return Err(format!("unexpected header {headers:?}"));
    }
    rdr.deserialize().map(|r| r.map_err(|e| e.to_string())).collect()
}
