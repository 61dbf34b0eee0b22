//! Time-series HTTP service.
//!
//! * `POST /write` takes a [`WriteBatch`] and answers `{accepted, duplicates}`.
//! * `GET /query?device=&from_ns=&to_ns=&fields=&source=` returns a JSON array,
//!   half-open `[from_ns, to_ns)`, ascending by time.
//! * `GET /export.csv` takes the same selection and returns CSV.
//! * `GET /health`.

pub mod store;

use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::thread::JoinHandle;

use axum::body::Bytes;
use axum::extract::{Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::schema::{write_csv_row, PointRecord, Source, TimestampedPoint, WriteBatch, CSV_HEADER};

pub use store::Store;

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("{0}")]
    BadRequest(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl IntoResponse for ServiceError {
    fn into_response(self) -> Response {
        let status = match self {
            ServiceError::BadRequest(_) => StatusCode::BAD_REQUEST,
            ServiceError::Io(_) => StatusCode::INTERNAL_SERVER_ERROR,
        };
        (status, Json(serde_json::json!({ "error": self.to_string() }))).into_response()
    }
}

const FIELDS: [&str; 3] = ["alcohol_raw", "temp_c", "rh_pct"];

#[derive(Debug, Deserialize)]
struct Selection {
    device: Option<String>,
    from_ns: Option<String>,
    to_ns: Option<String>,
    fields: Option<String>,
    source: Option<String>,
}

struct Parsed {
    device: String,
    from_ns: i64,
    to_ns: i64,
    fields: [bool; 3],
    source: Option<Source>,
}

impl Selection {
    fn parse(self) -> Result<Parsed, ServiceError> {
        let bad = |m: String| ServiceError::BadRequest(m);
        let device = self.device.ok_or_else(|| bad("missing device".into()))?;
        let num = |v: Option<String>, name: &str, default: i64| -> Result<i64, ServiceError> {
            v.map_or(Ok(default), |s| s.parse().map_err(|_| bad(format!("{name} is not an integer"))))
        };
        let from_ns = num(self.from_ns, "from_ns", i64::MIN)?;
        let to_ns = num(self.to_ns, "to_ns", i64::MAX)?;
        if from_ns > to_ns {
            return Err(bad(format!("from_ns {from_ns} is after to_ns {to_ns}")));
        }
        let mut fields = [self.fields.is_none(); 3];
        if let Some(list) = self.fields {
            for f in list.split(',').map(str::trim).filter(|f| !f.is_empty()) {
                let i = FIELDS.iter().position(|k| *k == f).ok_or_else(|| bad(format!("unknown field {f:?}")))?;
                fields[i] = true;
            }
        }
        let source = self.source.map(|s| s.parse::<Source>().map_err(bad)).transpose()?;
        Ok(Parsed { device, from_ns, to_ns, fields, source })
    }
}

#[derive(Serialize)]
struct QueryRow {
    t_ns: i64,
    #[serde(skip_serializing_if = "Option::is_none")]
    alcohol_raw: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    temp_c: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    rh_pct: Option<f64>,
    source: Source,
}

fn project(p: &PointRecord, f: [bool; 3]) -> QueryRow {
    QueryRow {
        t_ns: p.t_ns,
        alcohol_raw: f[0].then_some(p.alcohol_raw),
        temp_c: f[1].then_some(p.temp_c),
        rh_pct: f[2].then_some(p.rh_pct),
        source: p.source,
    }
}

async fn write(State(store): State<Arc<Store>>, body: Bytes) -> Result<Response, ServiceError> {
    let batch: WriteBatch =
        serde_json::from_slice(&body).map_err(|e| ServiceError::BadRequest(format!("invalid batch: {e}")))?;
    let resp = tokio::task::spawn_blocking(move || store.write(&batch))
        .await
        .map_err(|e| ServiceError::Io(std::io::Error::other(e)))??;
    Ok(Json(resp).into_response())
}

async fn query(State(store): State<Arc<Store>>, Query(sel): Query<Selection>) -> Result<Response, ServiceError> {
    let q = sel.parse()?;
    let rows: Vec<QueryRow> = store
        .query(&q.device, q.from_ns, q.to_ns, q.source)
        .iter()
        .map(|p| project(p, q.fields))
        .collect();
    Ok(Json(rows).into_response())
}

async fn export_csv(State(store): State<Arc<Store>>, Query(sel): Query<Selection>) -> Result<Response, ServiceError> {
    let q = sel.parse()?;
    let points = store.query(&q.device, q.from_ns, q.to_ns, q.source);
    Ok(([(header::CONTENT_TYPE, "text/csv")], render_csv(&q.device, &points)).into_response())
}

pub fn render_csv(device: &str, points: &[PointRecord]) -> String {
    let mut out = format!("{CSV_HEADER}\n").into_bytes();
    for p in points {
        write_csv_row(&mut out, &TimestampedPoint::from_record(device, p)).expect("write to Vec");
    }
    String::from_utf8(out).expect("ascii")
}

async fn health() -> &'static str {
    "ok"
}

pub fn router(store: Arc<Store>) -> Router {
    Router::new()
        .route("/write", post(write))
        .route("/query", get(query))
        .route("/export.csv", get(export_csv))
        .route("/health", get(health))
        .with_state(store)
}

/// A running service on its own runtime thread.
pub struct ServiceHandle {
    addr: SocketAddr,
    data_dir: PathBuf,
    store: Arc<Store>,
    stop: Option<tokio::sync::oneshot::Sender<()>>,
    thread: Option<JoinHandle<()>>,
}

impl ServiceHandle {
    /// Binds `addr` (port 0 picks one) and serves the store in `data_dir`.
    pub fn start(addr: SocketAddr, data_dir: &Path) -> Result<Self, ServiceError> {
        let store = Arc::new(Store::open(data_dir)?);
        let rt = tokio::runtime::Builder::new_multi_thread()
            .worker_threads(2)
            .enable_all()
            .build()?;
        let listener = rt.block_on(tokio::net::TcpListener::bind(addr))?;
        let local = listener.local_addr()?;
        let (tx, rx) = tokio::sync::oneshot::channel::<()>();
        let app = router(store.clone());
        let thread = std::thread::Builder::new().name("tsdb".into()).spawn(move || {
            rt.block_on(async move {
                let shutdown = async {
                    let _ = rx.await;
                };
                if let Err(e) = axum::serve(listener, app).with_graceful_shutdown(shutdown).await {
                    tracing::error!("service stopped: {e}");
                }
            });
        })?;
        Ok(Self { addr: local, data_dir: data_dir.to_path_buf(), store, stop: Some(tx), thread: Some(thread) })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    pub fn url(&self) -> String {
        format!("http://{}", self.addr)
    }

    pub fn data_dir(&self) -> &Path {
        &self.data_dir
    }

    /// Direct read access for in-process checks.
    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    /// Blocks until the server thread exits.
    pub fn wait(mut self) {
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }

    pub fn shutdown(mut self) {
        self.stop_inner();
    }

    fn stop_inner(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
        if let Some(t) = self.thread.take() {
            let _ = t.join();
        }
    }
}

impl Drop for ServiceHandle {
    fn drop(&mut self) {
        self.stop_inner();
    }
}
