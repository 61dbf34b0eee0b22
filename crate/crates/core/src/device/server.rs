//! Runs an emulator behind a local TCP socket, one central at a time.
//!
//! The socket stands in for the radio link: an ordered byte stream carrying
//! 20-byte frames. A registry directory holds one `<name>.json` per running
//! device so gateways can discover it by name.

use std::io::{ErrorKind, Read, Write};
use std::net::{SocketAddr, TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread::JoinHandle;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::afe::AnalogInput;
use super::emulator::Emulator;

/// Supplies the analog input for each virtual second.
pub trait SignalSource: Send {
    fn next_input(&mut self) -> Option<AnalogInput>;
}

impl<F: FnMut() -> Option<AnalogInput> + Send> SignalSource for F {
    fn next_input(&mut self) -> Option<AnalogInput> {
        self()
    }
}

/// Plays a recorded input series, then holds the last value.
pub struct TraceSource {
    inputs: Vec<AnalogInput>,
    pos: usize,
}

impl TraceSource {
    pub fn new(inputs: Vec<AnalogInput>) -> Self {
        Self { inputs, pos: 0 }
    }
}

impl SignalSource for TraceSource {
    fn next_input(&mut self) -> Option<AnalogInput> {
        let v = self.inputs.get(self.pos).or_else(|| self.inputs.last()).copied();
        self.pos += 1;
        v
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RegistryEntry {
    pub name: String,
    pub address: String,
}

impl RegistryEntry {
    pub fn path(dir: &Path, name: &str) -> PathBuf {
        dir.join(format!("{name}.json"))
    }

    pub fn write(&self, dir: &Path) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let tmp = dir.join(format!(".{}.json.tmp", self.name));
        std::fs::write(&tmp, serde_json::to_vec(self)?)?;
        std::fs::rename(tmp, Self::path(dir, &self.name))
    }

    /// Entries in `dir`; unreadable files are skipped.
    pub fn list(dir: &Path) -> std::io::Result<Vec<RegistryEntry>> {
        let mut out = Vec::new();
        for entry in std::fs::read_dir(dir)? {
            let path = entry?.path();
            if path.extension().is_some_and(|e| e == "json") {
                if let Some(e) = std::fs::read(&path).ok().and_then(|b| serde_json::from_slice(&b).ok()) {
                    out.push(e);
                }
            }
        }
        out.sort_by(|a: &RegistryEntry, b| a.name.cmp(&b.name));
        Ok(out)
    }
}

pub struct DeviceServer {
    addr: SocketAddr,
    stop: Arc<AtomicBool>,
    handle: Option<JoinHandle<Emulator>>,
    registry: Option<PathBuf>,
}

impl DeviceServer {
    /// Starts the device loop on `127.0.0.1:port` (0 picks a free port).
    /// `ticks_per_sec` virtual seconds elapse per wall second.
    pub fn spawn(
        emulator: Emulator,
        source: Box<dyn SignalSource>,
        port: u16,
        ticks_per_sec: f64,
        registry_dir: Option<&Path>,
    ) -> std::io::Result<Self> {
        let listener = TcpListener::bind(("127.0.0.1", port))?;
        listener.set_nonblocking(true)?;
        let addr = listener.local_addr()?;
        let registry = match registry_dir {
            Some(dir) => {
                let entry = RegistryEntry { name: emulator.name().to_string(), address: addr.to_string() };
                entry.write(dir)?;
                Some(RegistryEntry::path(dir, &entry.name))
            }
            None => None,
        };
        let stop = Arc::new(AtomicBool::new(false));
        let period = Duration::from_secs_f64(1.0 / ticks_per_sec.max(1e-3));
        let flag = stop.clone();
        let handle = std::thread::Builder::new()
            .name(format!("device-{}", emulator.name()))
            .spawn(move || run_loop(emulator, source, listener, period, flag))?;
        Ok(Self { addr, stop, handle: Some(handle), registry })
    }

    pub fn addr(&self) -> SocketAddr {
        self.addr
    }

    /// Stops the loop and hands back the emulator state.
    pub fn shutdown(mut self) -> Emulator {
        self.stop_inner().expect("device thread panicked")
    }

    fn stop_inner(&mut self) -> Option<Emulator> {
        self.stop.store(true, Ordering::SeqCst);
        if let Some(p) = self.registry.take() {
            let _ = std::fs::remove_file(p);
        }
        self.handle.take().and_then(|h| h.join().ok())
    }
}

impl Drop for DeviceServer {
    fn drop(&mut self) {
        let _ = self.stop_inner();
    }
}

fn run_loop(
    mut emu: Emulator,
    mut source: Box<dyn SignalSource>,
    listener: TcpListener,
    period: Duration,
    stop: Arc<AtomicBool>,
) -> Emulator {
    let mut conn: Option<TcpStream> = None;
    let mut next_tick = Instant::now() + period;
    let mut buf = [0u8; 512];
    while !stop.load(Ordering::SeqCst) {
        match listener.accept() {
            Ok((s, _)) if conn.is_none() => {
                if s.set_nonblocking(true).is_ok() {
                    let _ = s.set_nodelay(true);
                    conn = Some(s);
                }
            }
            // already serving a central: refuse by closing
            Ok((s, _)) => drop(s),
            Err(_) => {}
        }
        let mut lost = false;
        if let Some(s) = conn.as_mut() {
            loop {
                match s.read(&mut buf) {
                    Ok(0) => {
                        lost = true;
                        break;
                    }
                    Ok(n) => emu.receive_bytes(&buf[..n]),
                    Err(e) if e.kind() == ErrorKind::WouldBlock => break,
                    Err(e) if e.kind() == ErrorKind::Interrupted => continue,
                    Err(_) => {
                        lost = true;
                        break;
                    }
                }
            }
        }
        let now = Instant::now();
        if now >= next_tick {
            let input = source.next_input();
            if emu.tick(input).is_err() {
                tracing::error!(device = emu.name(), "flash write failed");
            }
            next_tick += period;
            if next_tick + period * 10 < now {
                next_tick = now + period;
            }
        }
        if emu.has_output() {
            let out = emu.take_output();
            if let Some(s) = conn.as_mut() {
                if write_all_blocking(s, &out).is_err() {
                    lost = true;
                }
            }
        }
        if lost {
            conn = None;
            emu.disconnect();
        }
        if !emu.has_output() {
            let wait = next_tick.saturating_duration_since(Instant::now());
            std::thread::sleep(wait.min(Duration::from_millis(1)));
        }
    }
    emu
}

fn write_all_blocking(s: &mut TcpStream, mut bytes: &[u8]) -> std::io::Result<()> {
    while !bytes.is_empty() {
        match s.write(bytes) {
            Ok(0) => return Err(ErrorKind::WriteZero.into()),
            Ok(n) => bytes = &bytes[n..],
            Err(e) if e.kind() == ErrorKind::WouldBlock => std::thread::sleep(Duration::from_micros(200)),
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::emulator::DeviceConfig;
    use crate::device::frame::{Frame, FrameDecoder};
    use crate::device::protocol::op;

    #[test]
    fn serves_get_info_and_registers() {
        let dir = tempfile::tempdir().unwrap();
        let emu = Emulator::new(DeviceConfig { flash_capacity_bytes: 1600, ..DeviceConfig::named("TAC-09") }).unwrap();
        let src = || Some(AnalogInput { current_na: 100.0, temp_c: 30.0, rh_pct: 40.0 });
        let server = DeviceServer::spawn(emu, Box::new(src), 0, 1000.0, Some(dir.path())).unwrap();
        let listed = RegistryEntry::list(dir.path()).unwrap();
        assert_eq!(listed[0].name, "TAC-09");
        assert_eq!(listed[0].address, server.addr().to_string());

        let mut s = TcpStream::connect(server.addr()).unwrap();
        s.set_read_timeout(Some(Duration::from_secs(5))).unwrap();
        s.write_all(&Frame::empty(op::GET_INFO, 4).encode()).unwrap();
        let mut d = FrameDecoder::new();
        let mut frames = Vec::new();
        let mut buf = [0u8; 64];
        while frames.len() < 2 {
            let n = s.read(&mut buf).unwrap();
            d.push(&buf[..n]);
            while let Some(f) = d.next_frame() {
                frames.push(f.unwrap());
            }
        }
        assert_eq!(frames[1].payload(), b"TAC-09");
        drop(s);
        std::thread::sleep(Duration::from_millis(50));
        let emu = server.shutdown();
        assert!(emu.uptime_s() > 0);
        assert!(RegistryEntry::list(dir.path()).unwrap().is_empty());
    }
}
