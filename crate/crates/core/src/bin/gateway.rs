use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;
use std::time::{Duration, Instant};

use clap::{Parser, Subcommand};
use tacnet::clock::{Clock, SystemClock};
use tacnet::gateway::{
    scan, BackfillLedger, DeviceClient, DeviceDescriptor, DeviceSession, Discovery, GatewayError, HttpSink,
    RegistryDiscovery, StaticDiscovery, StreamEvent, TcpLink, Uploader,
};

/// Bridges emulated devices to the time-series service.
#[derive(Parser)]
#[command(name = "gateway", version)]
struct Cli {
    #[arg(long, default_value = "http://127.0.0.1:8086")]
    service_url: String,
    /// Spool, local CSV and backfill ledger directory.
    #[arg(long, default_value = "gateway-data")]
    spool_dir: PathBuf,
    #[arg(long, default_value = "")]
    filter_prefix: String,
    /// Directory where devices advertise themselves.
    #[arg(long)]
    registry_dir: Option<PathBuf>,
    /// Static device entries, `NAME=HOST:PORT`; used instead of the registry.
    #[arg(long = "device")]
    devices: Vec<String>,
    #[arg(long, default_value_t = 60)]
    batch_size: usize,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// List reachable devices with their newest record id.
    Scan,
    /// Subscribe to live measurements and upload them.
    Stream {
        device: String,
        /// Stop after this many seconds.
        #[arg(long)]
        duration_s: Option<f64>,
        #[arg(long, default_value_t = 10.0)]
        flush_every_s: f64,
    },
    /// Download flash records not yet uploaded, then upload them.
    Backfill { device: String },
}

enum Failure {
    Usage(String),
    Runtime(String),
}

impl From<GatewayError> for Failure {
    fn from(e: GatewayError) -> Self {
        Failure::Runtime(e.to_string())
    }
}

const LINK_TIMEOUT: Duration = Duration::from_secs(5);

fn discovery(cli: &Cli) -> Result<Box<dyn Discovery>, Failure> {
    if !cli.devices.is_empty() {
        let entries = cli
            .devices
            .iter()
            .map(|d| {
                d.split_once('=')
                    .map(|(n, a)| (n.to_string(), a.to_string()))
                    .ok_or_else(|| Failure::Usage(format!("--device expects NAME=HOST:PORT, got {d:?}")))
            })
            .collect::<Result<_, _>>()?;
        return Ok(Box::new(StaticDiscovery(entries)));
    }
    match &cli.registry_dir {
        Some(dir) => Ok(Box::new(RegistryDiscovery { dir: dir.clone() })),
        None => Err(Failure::Usage("give --registry-dir or --device".into())),
    }
}

fn find(cli: &Cli, device: &str) -> Result<DeviceDescriptor, Failure> {
    scan(discovery(cli)?.as_ref(), &cli.filter_prefix)
        .into_iter()
        .find(|d| d.device_name == device)
        .ok_or_else(|| Failure::Usage(format!("device {device:?} not found")))
}

fn open(cli: &Cli, d: &DeviceDescriptor) -> Result<DeviceSession<TcpLink>, Failure> {
    let link = TcpLink::connect(&d.transport_address, LINK_TIMEOUT)?;
    let uploader = Uploader::with_dir(&d.device_name, Box::new(HttpSink::new(&cli.service_url)), &cli.spool_dir)?
        .batch_size(cli.batch_size);
    let ledger = BackfillLedger::load(&cli.spool_dir, &d.device_name).map_err(GatewayError::from)?;
    Ok(DeviceSession::new(DeviceClient::new(link), uploader, ledger, Arc::new(SystemClock)))
}

fn run(cli: &Cli) -> Result<(), Failure> {
    match &cli.cmd {
        Cmd::Scan => {
            for mut d in scan(discovery(cli)?.as_ref(), &cli.filter_prefix) {
                match TcpLink::connect(&d.transport_address, LINK_TIMEOUT)
                    .and_then(|l| DeviceClient::new(l).get_info())
                {
                    Ok(info) if info.info.has_records => d.latest_rec_id = Some(info.info.latest_rec_id),
                    Ok(_) => {}
                    Err(e) => tracing::warn!(device = %d.device_name, "probe failed: {e}"),
                }
                let latest = d.latest_rec_id.map_or("-".to_string(), |v| v.to_string());
                println!("{}\t{}\t{}", d.device_name, d.transport_address, latest);
            }
        }
        Cmd::Backfill { device } => {
            let d = find(cli, device)?;
            let mut s = open(cli, &d)?;
            let report = s.backfill(SystemClock.now_ns())?;
            if !s.flush(true)? {
                return Err(Failure::Runtime(format!("service unreachable; {} points spooled", s.uploader().pending())));
            }
            println!("{}", serde_json::to_string(&report).expect("serialize"));
        }
        Cmd::Stream { device, duration_s, flush_every_s } => {
            let d = find(cli, device)?;
            let mut s = open(cli, &d)?;
            s.backfill(SystemClock.now_ns())?;
            s.start_stream()?;
            let start = Instant::now();
            let mut last_flush = Instant::now();
            let flush_every = Duration::from_secs_f64(flush_every_s.max(0.1));
            while duration_s.is_none_or(|lim| start.elapsed().as_secs_f64() < lim) {
                if let StreamEvent::Disconnected = s.poll(Duration::from_millis(200))? {
                    tracing::warn!(device, "link lost, reconnecting");
                    std::thread::sleep(Duration::from_secs(1));
                    if let Ok(link) = TcpLink::connect(&d.transport_address, LINK_TIMEOUT) {
                        s.reconnect(DeviceClient::new(link));
                        if s.start_stream().is_ok() {
                            s.backfill(SystemClock.now_ns())?;
                        }
                    }
                }
                if last_flush.elapsed() >= flush_every {
                    s.flush(false)?;
                    last_flush = Instant::now();
                }
            }
            if s.is_connected() {
                let _ = s.client().unsubscribe();
            }
            s.flush(true)?;
            let st = s.uploader().stats();
            println!(
                "sent {} accepted {} duplicates {} pending {}",
                st.sent_points,
                st.accepted,
                st.duplicates,
                s.uploader().pending()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    tracing_subscriber::fmt()
        .with_env_filter(
            tracing_subscriber::EnvFilter::try_from_default_env().unwrap_or_else(|_| "warn".into()),
        )
        .with_writer(std::io::stderr)
        .init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(m)) => {
            eprintln!("gateway: {m}");
            ExitCode::from(2)
        }
        Err(Failure::Runtime(m)) => {
            eprintln!("gateway: {m}");
            ExitCode::from(3)
        }
    }
}
