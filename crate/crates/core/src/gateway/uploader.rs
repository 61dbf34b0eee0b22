//! Store-and-forward path to the service. Every point is written to the
//! local CSV and the spool before any send; the spool is trimmed only after
//! the service acknowledges a batch.

use std::collections::VecDeque;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::time::Duration;

use crate::schema::{write_csv_row, TimestampedPoint, WriteBatch, WriteResponse, CSV_HEADER};

use super::GatewayError;

pub const DEFAULT_BATCH_SIZE: usize = 60;

pub trait Sink: Send {
    fn write(&mut self, batch: &WriteBatch) -> Result<WriteResponse, GatewayError>;
}

/// POSTs batches to `<base>/write`.
pub struct HttpSink {
    agent: ureq::Agent,
    url: String,
}

impl HttpSink {
    pub fn new(base_url: &str) -> Self {
        let agent = ureq::Agent::config_builder()
            .timeout_global(Some(Duration::from_secs(10)))
            .build()
            .into();
        Self { agent, url: format!("{}/write", base_url.trim_end_matches('/')) }
    }
}

impl Sink for HttpSink {
    fn write(&mut self, batch: &WriteBatch) -> Result<WriteResponse, GatewayError> {
        let mut resp = self
            .agent
            .post(&self.url)
            .send_json(batch)
            .map_err(|e| GatewayError::Service(e.to_string()))?;
        resp.body_mut()
            .read_json::<WriteResponse>()
            .map_err(|e| GatewayError::Service(e.to_string()))
    }
}

/// Wraps a sink with an outage switch for fault-injection runs.
pub struct SwitchableSink<S: Sink> {
    inner: S,
    down: Arc<AtomicBool>,
}

impl<S: Sink> SwitchableSink<S> {
    pub fn new(inner: S) -> (Self, Arc<AtomicBool>) {
        let down = Arc::new(AtomicBool::new(false));
        (Self { inner, down: down.clone() }, down)
    }
}

impl<S: Sink> Sink for SwitchableSink<S> {
    fn write(&mut self, batch: &WriteBatch) -> Result<WriteResponse, GatewayError> {
        if self.down.load(Ordering::SeqCst) {
            return Err(GatewayError::Service("injected outage".into()));
        }
        self.inner.write(batch)
    }
}

/// Newline-delimited JSON queue of unacknowledged points.
pub struct Spool {
    path: Option<PathBuf>,
    pending: VecDeque<TimestampedPoint>,
    appender: Option<BufWriter<File>>,
}

impl Spool {
    pub fn file(dir: &Path, device: &str) -> PathBuf {
        dir.join(format!("{device}.spool.ndjson"))
    }

    pub fn in_memory() -> Self {
        Self { path: None, pending: VecDeque::new(), appender: None }
    }

    /// Opens a spool, reloading points left by an earlier run.
    pub fn open(path: PathBuf) -> Result<Self, GatewayError> {
        let mut pending = VecDeque::new();
        if let Ok(f) = File::open(&path) {
            for line in BufReader::new(f).lines() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                // a torn final line from a crash is dropped; its point was never acked
                match serde_json::from_str(&line) {
                    Ok(p) => pending.push_back(p),
                    Err(e) => tracing::warn!("skipping unreadable spool line: {e}"),
                }
            }
        }
        let mut spool = Self { path: Some(path), pending, appender: None };
        spool.rewrite()?;
        Ok(spool)
    }

    pub fn len(&self) -> usize {
        self.pending.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pending.is_empty()
    }

    pub fn push(&mut self, p: TimestampedPoint) -> Result<(), GatewayError> {
        if let Some(w) = self.appender.as_mut() {
            serde_json::to_writer(&mut *w, &p).map_err(std::io::Error::from)?;
            w.write_all(b"\n")?;
            w.flush()?;
        }
        self.pending.push_back(p);
        Ok(())
    }

    /// Leading run of same-source points, at most `max` long.
    fn head_batch(&self, max: usize) -> Vec<TimestampedPoint> {
        let Some(first) = self.pending.front() else { return Vec::new() };
        self.pending
            .iter()
            .take_while(|p| p.source == first.source && p.device == first.device)
            .take(max)
            .cloned()
            .collect()
    }

    fn ack(&mut self, n: usize) -> Result<(), GatewayError> {
        self.pending.drain(..n);
        self.rewrite()
    }

    fn rewrite(&mut self) -> Result<(), GatewayError> {
        let Some(path) = &self.path else { return Ok(()) };
        let tmp = path.with_extension("ndjson.tmp");
        {
            let mut w = BufWriter::new(File::create(&tmp)?);
            for p in &self.pending {
                serde_json::to_writer(&mut w, p).map_err(std::io::Error::from)?;
                w.write_all(b"\n")?;
            }
            w.flush()?;
        }
        std::fs::rename(&tmp, path)?;
        self.appender = Some(BufWriter::new(OpenOptions::new().append(true).open(path)?));
        Ok(())
    }
}

/// Local copy of everything received, in receipt order.
pub struct LocalCsv {
    w: Option<BufWriter<File>>,
}

impl LocalCsv {
    pub fn disabled() -> Self {
        Self { w: None }
    }

    pub fn open(path: &Path) -> Result<Self, GatewayError> {
        let fresh = std::fs::metadata(path).map_or(true, |m| m.len() == 0);
        let mut w = BufWriter::new(OpenOptions::new().create(true).append(true).open(path)?);
        if fresh {
            writeln!(w, "{CSV_HEADER}")?;
        }
        Ok(Self { w: Some(w) })
    }

    pub fn append(&mut self, p: &TimestampedPoint) -> Result<(), GatewayError> {
        if let Some(w) = self.w.as_mut() {
            write_csv_row(w, p)?;
        }
        Ok(())
    }

    pub fn flush(&mut self) -> Result<(), GatewayError> {
        if let Some(w) = self.w.as_mut() {
            w.flush()?;
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct UploadStats {
    pub sent_points: usize,
    pub accepted: usize,
    pub duplicates: usize,
    pub failed_attempts: usize,
}

/// One ordered upload queue per device.
pub struct Uploader {
    device: String,
    sink: Box<dyn Sink>,
    spool: Spool,
    csv: LocalCsv,
    batch_size: usize,
    stats: UploadStats,
}

impl Uploader {
    pub fn new(device: &str, sink: Box<dyn Sink>, spool: Spool, csv: LocalCsv) -> Self {
        Self { device: device.to_string(), sink, spool, csv, batch_size: DEFAULT_BATCH_SIZE, stats: UploadStats::default() }
    }

    /// File-backed uploader: `<dir>/<device>.spool.ndjson` and `<dir>/<device>.csv`.
    pub fn with_dir(device: &str, sink: Box<dyn Sink>, dir: &Path) -> Result<Self, GatewayError> {
        std::fs::create_dir_all(dir)?;
        let spool = Spool::open(Spool::file(dir, device))?;
        let csv = LocalCsv::open(&dir.join(format!("{device}.csv")))?;
        Ok(Self::new(device, sink, spool, csv))
    }

    pub fn batch_size(mut self, n: usize) -> Self {
        self.batch_size = n.max(1);
        self
    }

    pub fn device(&self) -> &str {
        &self.device
    }

    pub fn stats(&self) -> UploadStats {
        self.stats
    }

    pub fn pending(&self) -> usize {
        self.spool.len()
    }

    /// Records a point locally; nothing is sent yet.
    pub fn enqueue(&mut self, p: TimestampedPoint) -> Result<(), GatewayError> {
        self.csv.append(&p)?;
        self.spool.push(p)
    }

    /// Sends full batches; with `force`, also the trailing partial one.
    /// Stops at the first failure, leaving the rest spooled.
    pub fn flush(&mut self, force: bool) -> Result<(), GatewayError> {
        self.csv.flush()?;
        loop {
            let batch = self.spool.head_batch(self.batch_size);
            if batch.is_empty() || (!force && batch.len() < self.batch_size && batch.len() == self.spool.len()) {
                return Ok(());
            }
            let body = WriteBatch {
                device: batch[0].device.clone(),
                points: batch.iter().map(TimestampedPoint::record).collect(),
            };
            match self.sink.write(&body) {
                Ok(resp) => {
                    self.stats.sent_points += batch.len();
                    self.stats.accepted += resp.accepted;
                    self.stats.duplicates += resp.duplicates;
                    self.spool.ack(batch.len())?;
                }
                Err(e) => {
                    self.stats.failed_attempts += 1;
                    return Err(e);
                }
            }
        }
    }
}
