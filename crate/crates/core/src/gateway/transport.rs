//! Byte-stream links to a device: in-process for lockstep runs, TCP for
//! separately running emulators.

use std::io::{ErrorKind, Read, Write};
use std::net::TcpStream;
use std::sync::Arc;
use std::time::Duration;

use parking_lot::Mutex;

use crate::device::protocol::op;
use crate::device::Emulator;

use super::GatewayError;

pub trait Transport: Send {
    fn send(&mut self, bytes: &[u8]) -> Result<(), GatewayError>;
    /// Whatever bytes arrive within `timeout`; empty on timeout.
    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, GatewayError>;
    /// True when the peer answers synchronously, so an empty read means
    /// nothing more is coming.
    fn is_synchronous(&self) -> bool {
        false
    }
}

#[derive(Debug, Default)]
struct Faults {
    down: bool,
    corrupt_dumps: u32,
}

/// In-process link to a shared emulator.
pub struct SimLink {
    emu: Arc<Mutex<Emulator>>,
    faults: Arc<Mutex<Faults>>,
}

/// Fault injection for a [`SimLink`].
#[derive(Clone)]
pub struct SimLinkControl {
    emu: Arc<Mutex<Emulator>>,
    faults: Arc<Mutex<Faults>>,
}

impl SimLinkControl {
    /// Drops the link; the emulator sees a disconnect.
    pub fn disconnect(&self) {
        self.faults.lock().down = true;
        self.emu.lock().disconnect();
    }

    pub fn is_down(&self) -> bool {
        self.faults.lock().down
    }

    /// Flips a bit in one record of each of the next `n` flash dumps.
    pub fn corrupt_next_dumps(&self, n: u32) {
        self.faults.lock().corrupt_dumps = n;
    }
}

impl SimLink {
    pub fn connect(emu: Arc<Mutex<Emulator>>) -> (Self, SimLinkControl) {
        let faults = Arc::new(Mutex::new(Faults::default()));
        let ctl = SimLinkControl { emu: emu.clone(), faults: faults.clone() };
        (Self { emu, faults }, ctl)
    }
}

impl Transport for SimLink {
    fn send(&mut self, bytes: &[u8]) -> Result<(), GatewayError> {
        if self.faults.lock().down {
            return Err(GatewayError::Disconnected);
        }
        self.emu.lock().receive_bytes(bytes);
        Ok(())
    }

    fn recv(&mut self, _timeout: Duration) -> Result<Vec<u8>, GatewayError> {
        let mut faults = self.faults.lock();
        if faults.down {
            return Err(GatewayError::Disconnected);
        }
        let frames = self.emu.lock().take_frames();
        let mut out = Vec::with_capacity(frames.len() * 20);
        let mut corrupted = false;
        for f in frames {
            let mut bytes = f.encode();
            if faults.corrupt_dumps > 0 && !corrupted && f.opcode == op::DUMP_DATA {
                bytes[3 + 6] ^= 0x01;
                corrupted = true;
            }
            if f.opcode == op::DUMP_END && corrupted {
                faults.corrupt_dumps -= 1;
            }
            out.extend_from_slice(&bytes);
        }
        Ok(out)
    }

    fn is_synchronous(&self) -> bool {
        true
    }
}

pub struct TcpLink {
    stream: TcpStream,
}

impl TcpLink {
    pub fn connect(address: &str, timeout: Duration) -> Result<Self, GatewayError> {
        let addr = address
            .parse()
            .map_err(|_| GatewayError::Transport(format!("bad address {address:?}")))?;
        let stream = TcpStream::connect_timeout(&addr, timeout)
            .map_err(|e| GatewayError::Transport(format!("connect {address}: {e}")))?;
        stream.set_nodelay(true).ok();
        Ok(Self { stream })
    }
}

impl Transport for TcpLink {
    fn send(&mut self, bytes: &[u8]) -> Result<(), GatewayError> {
        self.stream.write_all(bytes).map_err(|_| GatewayError::Disconnected)
    }

    fn recv(&mut self, timeout: Duration) -> Result<Vec<u8>, GatewayError> {
        self.stream
            .set_read_timeout(Some(timeout.max(Duration::from_millis(1))))
            .map_err(|e| GatewayError::Transport(e.to_string()))?;
        let mut buf = [0u8; 4096];
        match self.stream.read(&mut buf) {
            Ok(0) => Err(GatewayError::Disconnected),
            Ok(n) => Ok(buf[..n].to_vec()),
            Err(e) if matches!(e.kind(), ErrorKind::WouldBlock | ErrorKind::TimedOut | ErrorKind::Interrupted) => {
                Ok(Vec::new())
            }
            Err(_) => Err(GatewayError::Disconnected),
        }
    }
}

