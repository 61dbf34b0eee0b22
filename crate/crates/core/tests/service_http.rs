use std::net::SocketAddr;

use proptest::prelude::*;
use serde_json::Value;
use tacnet::schema::{PointRecord, Source, WriteBatch, WriteResponse};
use tacnet::service::{ServiceHandle, Store};

fn start(dir: &std::path::Path) -> ServiceHandle {
    ServiceHandle::start(SocketAddr::from(([127, 0, 0, 1], 0)), dir).unwrap()
}

fn point(t_ns: i64, source: Source) -> PointRecord {
    PointRecord { t_ns, alcohol_raw: t_ns as f64 * 0.5, temp_c: 30.0, rh_pct: 40.0, source }
}

fn post(svc: &ServiceHandle, body: &str) -> Result<WriteResponse, ureq::Error> {
    ureq::post(format!("{}/write", svc.url()))
        .header("content-type", "application/json")
        .send(body)?
        .body_mut()
        .read_json()
}

fn write(svc: &ServiceHandle, device: &str, points: Vec<PointRecord>) -> WriteResponse {
    post(svc, &serde_json::to_string(&WriteBatch { device: device.into(), points }).unwrap()).unwrap()
}

fn get(svc: &ServiceHandle, path: &str) -> Result<String, ureq::Error> {
    ureq::get(format!("{}{}", svc.url(), path)).call()?.body_mut().read_to_string()
}

fn query(svc: &ServiceHandle, qs: &str) -> Vec<Value> {
    serde_json::from_str(&get(svc, &format!("/query?{qs}")).unwrap()).unwrap()
}

fn status(r: Result<impl Sized, ureq::Error>) -> u16 {
    match r {
        Err(ureq::Error::StatusCode(c)) => c,
        Err(e) => panic!("unexpected error {e}"),
        Ok(_) => 200,
    }
}

#[test]
fn empty_batch_and_idempotent_rewrite() {
    let dir = tempfile::tempdir().unwrap();
    let svc = start(dir.path());
    assert_eq!(write(&svc, "TAC-01", vec![]), WriteResponse { accepted: 0, duplicates: 0 });
    let pts: Vec<_> = (0..5).map(|t| point(t, Source::Realtime)).collect();
    assert_eq!(write(&svc, "TAC-01", pts.clone()), WriteResponse { accepted: 5, duplicates: 0 });
    assert_eq!(write(&svc, "TAC-01", pts), WriteResponse { accepted: 0, duplicates: 5 });
    assert_eq!(get(&svc, "/health").unwrap(), "ok");
}

#[test]
fn devices_are_isolated() {
    let dir = tempfile::tempdir().unwrap();
    let svc = start(dir.path());
    for t in 0..10 {
        write(&svc, if t % 2 == 0 { "TAC-01" } else { "TAC-02" }, vec![point(t, Source::Realtime)]);
    }
    let a = query(&svc, "device=TAC-01");
    let b = query(&svc, "device=TAC-02");
    assert_eq!(a.len(), 5);
    assert_eq!(b.len(), 5);
    assert!(a.iter().all(|p| p["t_ns"].as_i64().unwrap() % 2 == 0));
    assert!(b.iter().all(|p| p["t_ns"].as_i64().unwrap() % 2 == 1));
}

#[test]
fn query_order_range_and_projection() {
    let dir = tempfile::tempdir().unwrap();
    let svc = start(dir.path());
    assert!(query(&svc, "device=TAC-01").is_empty());
    // written out of order, as backfill arriving after realtime would be
    let pts: Vec<_> = (0..100).rev().map(|t| point(t * 10, Source::Backfill)).collect();
    write(&svc, "TAC-01", pts);
    let all = query(&svc, "device=TAC-01");
    assert_eq!(all.len(), 100);
    let ts: Vec<i64> = all.iter().map(|p| p["t_ns"].as_i64().unwrap()).collect();
    assert!(ts.windows(2).all(|w| w[0] < w[1]));
    let part = query(&svc, "device=TAC-01&from_ns=100&to_ns=200");
    assert_eq!(part.first().unwrap()["t_ns"], 100);
    assert_eq!(part.last().unwrap()["t_ns"], 190);
    let proj = query(&svc, "device=TAC-01&from_ns=0&to_ns=1&fields=temp_c");
    let obj = proj[0].as_object().unwrap();
    assert_eq!(obj.keys().cloned().collect::<Vec<_>>(), vec!["source", "t_ns", "temp_c"]);
    assert!(query(&svc, "device=TAC-01&source=realtime").is_empty());
}

#[test]
fn bad_requests_are_400() {
    let dir = tempfile::tempdir().unwrap();
    let svc = start(dir.path());
    assert_eq!(status(post(&svc, "{not json")), 400);
    let unknown = r#"{"device":"TAC-01","points":[],"extra":1}"#;
    assert_eq!(status(post(&svc, unknown)), 400);
    let unknown_point = r#"{"device":"TAC-01","points":[{"t_ns":1,"alcohol_raw":0,"temp_c":0,"rh_pct":0,"source":"realtime","gain":3}]}"#;
    assert_eq!(status(post(&svc, unknown_point)), 400);
    assert_eq!(status(get(&svc, "/query?device=TAC-01&from_ns=10&to_ns=5")), 400);
    assert_eq!(status(get(&svc, "/export.csv?device=TAC-01&from_ns=10&to_ns=5")), 400);
    assert_eq!(status(get(&svc, "/query?device=TAC-01&fields=pressure")), 400);
    assert_eq!(status(get(&svc, "/query?from_ns=0")), 400);
}

#[test]
fn export_matches_golden() {
    let dir = tempfile::tempdir().unwrap();
    let svc = start(dir.path());
    let t0 = 1_577_836_800_000_000_000i64;
    write(
        &svc,
        "TAC-01",
        vec![
            PointRecord { t_ns: t0 + 60_000_000_000, alcohol_raw: 1340.6, temp_c: 33.02, rh_pct: 41.24, source: Source::Backfill },
            PointRecord { t_ns: t0, alcohol_raw: 265.8, temp_c: 33.01, rh_pct: 41.2, source: Source::Backfill },
        ],
    );
    let golden = include_str!("fixtures/export_two_points.csv");
    assert_eq!(get(&svc, "/export.csv?device=TAC-01").unwrap(), golden);
    let first_only = get(&svc, &format!("/export.csv?device=TAC-01&to_ns={}", t0 + 60_000_000_000)).unwrap();
    assert_eq!(first_only.lines().count(), 2);
    assert_eq!(get(&svc, "/export.csv?device=NONE").unwrap(), "t_ns,device,alcohol_raw,temp_c,rh_pct,source\n");
}

#[test]
fn restart_keeps_every_accepted_point() {
    let dir = tempfile::tempdir().unwrap();
    let svc = start(dir.path());
    let mut n = 0;
    for k in 0..20 {
        n += write(&svc, "TAC-01", (0..7).map(|i| point(k * 7 + i, Source::Realtime)).collect()).accepted;
    }
    svc.shutdown();
    let svc = start(dir.path());
    assert_eq!(query(&svc, "device=TAC-01").len(), n);
}

#[test]
fn concurrent_http_writers() {
    let dir = tempfile::tempdir().unwrap();
    let svc = start(dir.path());
    let url = svc.url();
    let threads: Vec<_> = (0..4)
        .map(|d| {
            let url = url.clone();
            std::thread::spawn(move || {
                for k in 0..25i64 {
                    let b = WriteBatch {
                        device: format!("DEV-{d}"),
                        points: (0..10).map(|i| point(k * 10 + i, Source::Realtime)).collect(),
                    };
                    ureq::post(format!("{url}/write")).send_json(&b).unwrap();
                }
            })
        })
        .collect();
    for t in threads {
        t.join().unwrap();
    }
    for d in 0..4 {
        assert_eq!(query(&svc, &format!("device=DEV-{d}")).len(), 250);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]
    #[test]
    fn query_returns_what_was_written(
        pts in proptest::collection::btree_map((any::<i64>(), prop_oneof![Just(Source::Realtime), Just(Source::Backfill)]),
                                              (-1e6f64..1e6, -40f64..85.0, 0f64..100.0), 0..50)
    ) {
        let dir = tempfile::tempdir().unwrap();
        let store = Store::open(dir.path()).unwrap();
        let batch: Vec<PointRecord> = pts.iter().map(|(&(t, s), &(a, tc, rh))| PointRecord { t_ns: t, alcohol_raw: a, temp_c: tc, rh_pct: rh, source: s }).collect();
        store.write(&WriteBatch { device: "P".into(), points: batch.clone() }).unwrap();
        let mut got = store.query("P", i64::MIN, i64::MAX, None);
        let mut want: Vec<PointRecord> = batch.into_iter().filter(|p| p.t_ns != i64::MAX).collect();
        want.sort_by_key(|p| (p.t_ns, p.source));
        got.sort_by_key(|p| (p.t_ns, p.source));
        prop_assert_eq!(got, want);
    }
}
