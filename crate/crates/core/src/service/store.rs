//! Append-only per-device logs with an in-memory sorted index.
//!
//! Log entry format: `<decimal byte length> <json batch>\n`. One entry holds
//! the new points of one accepted write, so a torn tail entry (crash during
//! append) drops that whole write and nothing else.

use std::collections::{BTreeMap, HashMap};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use parking_lot::{Mutex, RwLock};

use crate::schema::{valid_device_name, PointRecord, Source, WriteBatch, WriteResponse};

use super::ServiceError;

type Index = BTreeMap<(i64, Source), PointRecord>;

struct Series {
    log: Mutex<File>,
    points: RwLock<Index>,
}

pub struct Store {
    dir: PathBuf,
    series: RwLock<HashMap<String, Arc<Series>>>,
}

impl Store {
    /// Opens `dir`, replaying every `<device>.log` in it.
    pub fn open(dir: &Path) -> Result<Self, ServiceError> {
        std::fs::create_dir_all(dir)?;
        let mut series = HashMap::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            let Some(device) = path
                .file_name()
                .and_then(|n| n.to_str())
                .and_then(|n| n.strip_suffix(".log"))
            else {
                continue;
            };
            if !valid_device_name(device) {
                continue;
            }
            let (points, good_len) = replay(&path)?;
            let log = OpenOptions::new().write(true).open(&path)?;
            // cut a torn tail so new entries start on a clean boundary
            log.set_len(good_len)?;
            let mut log = log;
            std::io::Seek::seek(&mut log, std::io::SeekFrom::End(0))?;
            series.insert(
                device.to_string(),
                Arc::new(Series { log: Mutex::new(log), points: RwLock::new(points) }),
            );
        }
        Ok(Self { dir: dir.to_path_buf(), series: RwLock::new(series) })
    }

    fn series(&self, device: &str) -> Option<Arc<Series>> {
        self.series.read().get(device).cloned()
    }

    fn series_or_create(&self, device: &str) -> Result<Arc<Series>, ServiceError> {
        if let Some(s) = self.series(device) {
            return Ok(s);
        }
        let mut map = self.series.write();
        if let Some(s) = map.get(device) {
            return Ok(s.clone());
        }
        let path = self.dir.join(format!("{device}.log"));
        let log = OpenOptions::new().create(true).append(true).open(path)?;
        let s = Arc::new(Series { log: Mutex::new(log), points: RwLock::new(BTreeMap::new()) });
        map.insert(device.to_string(), s.clone());
        Ok(s)
    }

    /// Appends the batch's new points as one log entry. Points already
    /// stored, or repeated within the batch, count as duplicates.
    pub fn write(&self, batch: &WriteBatch) -> Result<WriteResponse, ServiceError> {
        if batch.points.is_empty() {
            return Ok(WriteResponse::default());
        }
        if !valid_device_name(&batch.device) {
            return Err(ServiceError::BadRequest(format!("invalid device name {:?}", batch.device)));
        }
        let series = self.series_or_create(&batch.device)?;
        let mut log = series.log.lock();
        let mut fresh = Index::new();
        {
            let points = series.points.read();
            for p in &batch.points {
                let key = (p.t_ns, p.source);
                if !points.contains_key(&key) {
                    fresh.entry(key).or_insert(*p);
                }
            }
        }
        let resp = WriteResponse { accepted: fresh.len(), duplicates: batch.points.len() - fresh.len() };
        if fresh.is_empty() {
            return Ok(resp);
        }
        let entry = WriteBatch { device: batch.device.clone(), points: fresh.values().copied().collect() };
        let json = serde_json::to_vec(&entry).expect("batch serializes");
        let mut buf = format!("{} ", json.len()).into_bytes();
        buf.extend_from_slice(&json);
        buf.push(b'\n');
        log.write_all(&buf)?;
        log.flush()?;
        series.points.write().extend(fresh);
        Ok(resp)
    }

    /// Points with `from_ns <= t_ns < to_ns`, ascending by time.
    pub fn query(&self, device: &str, from_ns: i64, to_ns: i64, source: Option<Source>) -> Vec<PointRecord> {
        let Some(series) = self.series(device) else { return Vec::new() };
        if from_ns >= to_ns {
            return Vec::new();
        }
        let points = series.points.read();
        points
            .range((from_ns, Source::Realtime)..(to_ns, Source::Realtime))
            .map(|(_, p)| *p)
            .filter(|p| source.is_none_or(|s| p.source == s))
            .collect()
    }

    pub fn devices(&self) -> Vec<String> {
        let mut v: Vec<String> = self.series.read().keys().cloned().collect();
        v.sort();
        v
    }

    pub fn count(&self, device: &str) -> usize {
        self.series(device).map_or(0, |s| s.points.read().len())
    }
}

fn replay(path: &Path) -> Result<(Index, u64), ServiceError> {
    let mut points = BTreeMap::new();
    let mut r = BufReader::new(File::open(path)?);
    let mut good = 0u64;
    loop {
        let mut len_buf = Vec::new();
        if r.read_until(b' ', &mut len_buf)? == 0 {
            break;
        }
        let Some(len) = std::str::from_utf8(&len_buf)
            .ok()
            .and_then(|s| s.trim_end_matches(' ').parse::<usize>().ok())
            .filter(|_| len_buf.last() == Some(&b' '))
        else {
            tracing::warn!(path = %path.display(), "torn log entry header, truncating");
            break;
        };
        let mut body = vec![0u8; len + 1];
        if r.read_exact(&mut body).is_err() || body[len] != b'\n' {
            tracing::warn!(path = %path.display(), "torn log entry, truncating");
            break;
        }
        let Ok(batch) = serde_json::from_slice::<WriteBatch>(&body[..len]) else {
            tracing::warn!(path = %path.display(), "unreadable log entry, truncating");
            break;
        };
        for p in batch.points {
            points.insert((p.t_ns, p.source), p);
        }
        good += (len_buf.len() + len + 1) as u64;
    }
    Ok((points, good))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn batch(device: &str, ts: &[i64]) -> WriteBatch {
        WriteBatch {
            device: device.into(),
            points: ts
                .iter()
                .map(|&t| PointRecord { t_ns: t, alcohol_raw: t as f64, temp_c: 30.0, rh_pct: 40.0, source: Source::Backfill })
                .collect(),
        }
    }

    #[test]
    fn dedup_and_half_open_query() {
        let dir = tempfile::tempdir().unwrap();
        let s = Store::open(dir.path()).unwrap();
        assert_eq!(s.write(&batch("A", &[3, 1, 2])).unwrap(), WriteResponse { accepted: 3, duplicates: 0 });
        assert_eq!(s.write(&batch("A", &[3, 1, 2])).unwrap(), WriteResponse { accepted: 0, duplicates: 3 });
        assert_eq!(s.write(&batch("A", &[4, 4])).unwrap(), WriteResponse { accepted: 1, duplicates: 1 });
        let ts: Vec<i64> = s.query("A", 1, 4, None).iter().map(|p| p.t_ns).collect();
        assert_eq!(ts, vec![1, 2, 3]);
        assert!(s.query("B", i64::MIN, i64::MAX, None).is_empty());
    }

    #[test]
    fn restart_replays_and_drops_torn_tail() {
        let dir = tempfile::tempdir().unwrap();
        {
            let s = Store::open(dir.path()).unwrap();
            s.write(&batch("A", &[1, 2])).unwrap();
            s.write(&batch("A", &[3])).unwrap();
        }
        let log = dir.path().join("A.log");
        let mut f = OpenOptions::new().append(true).open(&log).unwrap();
        f.write_all(b"500 {\"device\":\"A\",\"po").unwrap();
        drop(f);
        let s = Store::open(dir.path()).unwrap();
        assert_eq!(s.count("A"), 3);
        s.write(&batch("A", &[9])).unwrap();
        drop(s);
        let s = Store::open(dir.path()).unwrap();
        assert_eq!(s.count("A"), 4);
    }

    #[test]
    fn concurrent_writers_to_different_devices() {
        let dir = tempfile::tempdir().unwrap();
        let s = Arc::new(Store::open(dir.path()).unwrap());
        let handles: Vec<_> = (0..4)
            .map(|d| {
                let s = s.clone();
                std::thread::spawn(move || {
                    for k in 0..50 {
                        let ts: Vec<i64> = (k * 10..k * 10 + 10).collect();
                        s.write(&batch(&format!("D{d}"), &ts)).unwrap();
                    }
                })
            })
            .collect();
        for h in handles {
            h.join().unwrap();
        }
        drop(s);
        let s = Store::open(dir.path()).unwrap();
        for d in 0..4 {
            assert_eq!(s.count(&format!("D{d}")), 500);
        }
    }
}
