//! Request/response side of the device protocol. Measurement pushes may
//! arrive between any two response frames; they are queued, not dropped.

use std::collections::VecDeque;
use std::time::{Duration, Instant};

use crate::device::frame::{Frame, FrameDecoder};
use crate::device::protocol::{
    dump_checksum, op, DumpBegin, DumpEnd, FlashReadRequest, InfoPayload, Measurement, Nak,
};
use crate::device::record::FlashRecord;

use super::transport::Transport;
use super::GatewayError;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DeviceInfo {
    pub name: String,
    pub info: InfoPayload,
}

pub struct DeviceClient<T: Transport> {
    link: T,
    decoder: FrameDecoder,
    next_seq: u8,
    pushes: VecDeque<Measurement>,
    timeout: Duration,
}

impl<T: Transport> DeviceClient<T> {
    pub fn new(link: T) -> Self {
        Self {
            link,
            decoder: FrameDecoder::new(),
            next_seq: 0,
            pushes: VecDeque::new(),
            timeout: Duration::from_secs(5),
        }
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    fn send(&mut self, opcode: u8, payload: &[u8]) -> Result<u8, GatewayError> {
        let seq = self.next_seq;
        self.next_seq = self.next_seq.wrapping_add(1);
        let frame = Frame::new(opcode, seq, payload).expect("request payloads fit");
        self.link.send(&frame.encode())?;
        Ok(seq)
    }

    /// Next non-push frame, queueing pushes seen on the way.
    fn next_response(&mut self, deadline: Instant) -> Result<Frame, GatewayError> {
        loop {
            while let Some(next) = self.decoder.next_frame() {
                match next {
                    Ok(f) if f.opcode == op::MEASUREMENT => {
                        if let Some(m) = Measurement::decode(f.payload()) {
                            self.pushes.push_back(m);
                        }
                    }
                    Ok(f) => return Ok(f),
                    Err(e) => return Err(GatewayError::Protocol(e.to_string())),
                }
            }
            let now = Instant::now();
            if now >= deadline {
                return Err(GatewayError::Timeout);
            }
            let bytes = self.link.recv(deadline - now)?;
            if bytes.is_empty() && self.link.is_synchronous() {
                return Err(GatewayError::Timeout);
            }
            self.decoder.push(&bytes);
        }
    }

    fn expect(&mut self, frame: &Frame, opcode: u8, seq: u8) -> Result<(), GatewayError> {
        if frame.opcode == op::NAK {
            let nak = Nak::decode(frame.payload())
                .ok_or_else(|| GatewayError::Protocol("short NAK".into()))?;
            return Err(GatewayError::Nak { code: nak.code, window: nak.window });
        }
        if frame.opcode != opcode || frame.seq != seq {
            return Err(GatewayError::Protocol(format!(
                "expected opcode {opcode:#04x} seq {seq}, got {:#04x} seq {}",
                frame.opcode, frame.seq
            )));
        }
        Ok(())
    }

    pub fn get_info(&mut self) -> Result<DeviceInfo, GatewayError> {
        let seq = self.send(op::GET_INFO, &[])?;
        let deadline = Instant::now() + self.timeout;
        let f = self.next_response(deadline)?;
        self.expect(&f, op::INFO, seq)?;
        let info = InfoPayload::decode(f.payload()).ok_or_else(|| GatewayError::Protocol("bad INFO".into()))?;
        let f = self.next_response(deadline)?;
        self.expect(&f, op::INFO_NAME, seq.wrapping_add(1))?;
        let name = String::from_utf8_lossy(f.payload()).into_owned();
        Ok(DeviceInfo { name, info })
    }

    fn simple(&mut self, opcode: u8, payload: &[u8]) -> Result<(), GatewayError> {
        let seq = self.send(opcode, payload)?;
        let f = self.next_response(Instant::now() + self.timeout)?;
        self.expect(&f, op::ACK, seq)
    }

    pub fn subscribe(&mut self) -> Result<(), GatewayError> {
        self.simple(op::SUBSCRIBE, &[])
    }

    pub fn unsubscribe(&mut self) -> Result<(), GatewayError> {
        self.simple(op::UNSUBSCRIBE, &[])
    }

    pub fn set_time_ref(&mut self, t_ns: i64) -> Result<(), GatewayError> {
        self.simple(op::SET_TIME_REF, &t_ns.to_le_bytes())
    }

    /// Downloads records `[from_id, to_id]`. A checksum or sequence failure
    /// is retried once before reporting an integrity error.
    pub fn flash_read(&mut self, from_id: u16, to_id: u16) -> Result<Vec<FlashRecord>, GatewayError> {
        match self.flash_read_once(from_id, to_id) {
            Err(GatewayError::Integrity(first)) => {
                tracing::warn!(from_id, to_id, "flash dump failed integrity check ({first}), retrying");
                self.flash_read_once(from_id, to_id)
            }
            other => other,
        }
    }

    fn flash_read_once(&mut self, from_id: u16, to_id: u16) -> Result<Vec<FlashRecord>, GatewayError> {
        let req = FlashReadRequest { from_id, to_id };
        let seq = self.send(op::FLASH_READ, &req.encode())?;
        // one data frame per record; scale the deadline with the dump size
        let span = u64::from(to_id.wrapping_sub(from_id)) + 1;
        let deadline = Instant::now() + self.timeout + Duration::from_micros(50 * span);
        let f = self.next_response(deadline)?;
        self.expect(&f, op::DUMP_BEGIN, seq)?;
        let begin = DumpBegin::decode(f.payload()).ok_or_else(|| GatewayError::Protocol("bad DUMP_BEGIN".into()))?;
        let mut raw: Vec<[u8; 16]> = Vec::with_capacity(begin.count as usize);
        let mut expect_seq = seq;
        let mut seq_ok = true;
        let end = loop {
            let f = self.next_response(deadline)?;
            expect_seq = expect_seq.wrapping_add(1);
            seq_ok &= f.seq == expect_seq;
            match f.opcode {
                op::DUMP_DATA => {
                    let b: [u8; 16] = f
                        .payload()
                        .try_into()
                        .map_err(|_| GatewayError::Integrity("data frame is not 16 bytes".into()))?;
                    raw.push(b);
                }
                op::DUMP_END => {
                    break DumpEnd::decode(f.payload()).ok_or_else(|| GatewayError::Protocol("bad DUMP_END".into()))?;
                }
                other => {
                    return Err(GatewayError::Protocol(format!("unexpected opcode {other:#04x} in dump")));
                }
            }
        };
        if !seq_ok {
            return Err(GatewayError::Integrity("dump sequence numbers not consecutive".into()));
        }
        if end.count as usize != raw.len() || begin.count != end.count {
            return Err(GatewayError::Integrity(format!(
                "record count mismatch: announced {}, received {}",
                end.count,
                raw.len()
            )));
        }
        if dump_checksum(&raw) != end.crc32 {
            return Err(GatewayError::Integrity("CRC32 mismatch".into()));
        }
        raw.iter()
            .map(|b| FlashRecord::decode(b).map_err(|e| GatewayError::Integrity(e.to_string())))
            .collect()
    }

    /// Pulls whatever has arrived and returns the queued measurements.
    pub fn poll_measurements(&mut self, wait: Duration) -> Result<Vec<Measurement>, GatewayError> {
        let bytes = self.link.recv(wait)?;
        self.decoder.push(&bytes);
        while let Some(next) = self.decoder.next_frame() {
            match next {
                Ok(f) if f.opcode == op::MEASUREMENT => {
                    if let Some(m) = Measurement::decode(f.payload()) {
                        self.pushes.push_back(m);
                    }
                }
                Ok(f) => tracing::debug!(opcode = f.opcode, "unsolicited frame ignored"),
                Err(e) => tracing::warn!("bad frame from device: {e}"),
            }
        }
        Ok(self.pushes.drain(..).collect())
    }

    pub fn into_link(self) -> T {
        self.link
    }
}
