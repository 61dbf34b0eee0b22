use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Duration;

use clap::{Parser, Subcommand};
use tacnet::device::{AnalogInput, DeviceConfig, DeviceServer, Emulator, SignalSource, TraceSource};
use tacnet::harness::{self, HarnessError, ScenarioConfig};
use tacnet::physio::{simulate_session, FuelCellParams};
use tacnet::service::ServiceHandle;

/// Transdermal alcohol pipeline: reproductions, service and device emulator.
#[derive(Parser)]
#[command(name = "tacnet", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the six-jar calibration routine.
    Calibrate {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run a scenario end to end and write data, metrics and plots.
    Session {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Analyze a service CSV export.
    Analyze {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Draw figures from TACg/breathalyzer CSVs.
    Plot {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the time-series service until killed.
    Serve {
        #[arg(long, default_value = "127.0.0.1")]
        host: String,
        #[arg(long, default_value_t = 8086)]
        port: u16,
        #[arg(long)]
        data_dir: PathBuf,
    },
    /// Run one emulated device on a TCP port.
    Device {
        #[arg(long, default_value = "TAC-01")]
        name: String,
        #[arg(long, default_value_t = 0)]
        port: u16,
        /// Advertise the device here for `gateway scan`.
        #[arg(long)]
        registry_dir: Option<PathBuf>,
        /// Persist flash to this file.
        #[arg(long)]
        flash: Option<PathBuf>,
        /// Drive the sensor from this scenario's first arm instead of a flat baseline.
        #[arg(long)]
        scenario: Option<PathBuf>,
        /// Virtual seconds per wall second.
        #[arg(long, default_value_t = 1.0)]
        ticks_per_sec: f64,
        /// Stop after this many wall seconds.
        #[arg(long)]
        run_for_s: Option<f64>,
    },
}

fn validation(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Validation(e.to_string())
}

fn runtime(e: impl std::fmt::Display) -> HarnessError {
    HarnessError::Runtime(e.to_string())
}

fn block(run_for_s: Option<f64>) {
    match run_for_s {
        Some(s) => std::thread::sleep(Duration::from_secs_f64(s.max(0.0))),
        None => loop {
            std::thread::park();
        },
    }
}

fn device(
    name: String,
    port: u16,
    registry_dir: Option<&Path>,
    flash: Option<PathBuf>,
    scenario: Option<&Path>,
    ticks_per_sec: f64,
    run_for_s: Option<f64>,
) -> Result<(), HarnessError> {
    let source: Box<dyn SignalSource> = match scenario {
        Some(p) => {
            let cfg = ScenarioConfig::load(p)?;
            if cfg.arms.is_empty() {
                return Err(validation("scenario has no arms"));
            }
            let trace = simulate_session(&cfg.session_config(0)).map_err(validation)?;
            let inputs = trace
                .rows
                .iter()
                .map(|r| AnalogInput { current_na: r.current_na, temp_c: r.temp_c, rh_pct: r.rh_pct })
                .collect();
            Box::new(TraceSource::new(inputs))
        }
        None => {
            let zero = FuelCellParams::default().zero_current_na;
            Box::new(move || Some(AnalogInput { current_na: zero, temp_c: 30.0, rh_pct: 45.0 }))
        }
    };
    let emu = Emulator::new(DeviceConfig { flash_path: flash, ..DeviceConfig::named(name) }).map_err(validation)?;
    let server = DeviceServer::spawn(emu, source, port, ticks_per_sec, registry_dir).map_err(runtime)?;
    println!("{}", server.addr());
    block(run_for_s);
    let emu = server.shutdown();
    tracing::info!(records = emu.fifo().len(), "device stopped");
    Ok(())
}

fn run(cli: Cli) -> Result<(), HarnessError> {
    match cli.cmd {
        Cmd::Calibrate { config, out } => {
            let rep = harness::calibrate(&ScenarioConfig::load(&config)?, &out)?;
            println!(
                "slope {:.3} counts/ppm, intercept {:.2} counts, R² {:.6}",
                rep.curve.slope_counts_per_ppm, rep.curve.intercept_counts, rep.curve.fit_r2
            );
        }
        Cmd::Session { config, out } => {
            let o = harness::run_session(&ScenarioConfig::load(&config)?, &out)?;
            print!("{}", o.report.to_json());
        }
        Cmd::Analyze { config, out } => {
            print!("{}", harness::analyze(&config, &out)?.to_json());
        }
        Cmd::Plot { config, out } => {
            for f in harness::plot(&config, &out)? {
                println!("{}", out.join(f).display());
            }
        }
        Cmd::Serve { host, port, data_dir } => {
            let addr: SocketAddr = format!("{host}:{port}").parse().map_err(validation)?;
            let h = ServiceHandle::start(addr, &data_dir).map_err(runtime)?;
            println!("{}", h.url());
            h.wait();
        }
        Cmd::Device { name, port, registry_dir, flash, scenario, ticks_per_sec, run_for_s } => {
            if ticks_per_sec.is_nan() || ticks_per_sec <= 0.0 {
                return Err(validation("ticks-per-sec must be > 0"));
            }
            device(name, port, registry_dir.as_deref(), flash, scenario.as_deref(), ticks_per_sec, run_for_s)?;
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
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("tacnet: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
