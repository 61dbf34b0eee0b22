//! 20-byte frames over an ordered byte stream: `opcode u8 | seq u8 | len u8 | payload`.

use thiserror::Error;

pub const MTU: usize = 20;
pub const HEADER_LEN: usize = 3;
pub const MAX_PAYLOAD: usize = MTU - HEADER_LEN;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FrameError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD}-byte limit")]
    PayloadTooLong(usize),
    #[error("malformed frame header (opcode {opcode:#04x}, seq {seq}, len {len})")]
    Malformed { opcode: u8, seq: u8, len: u8 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Frame {
    pub opcode: u8,
    pub seq: u8,
    payload: Vec<u8>,
}

impl Frame {
    pub fn new(opcode: u8, seq: u8, payload: &[u8]) -> Result<Self, FrameError> {
        if payload.len() > MAX_PAYLOAD {
            return Err(FrameError::PayloadTooLong(payload.len()));
        }
        Ok(Self { opcode, seq, payload: payload.to_vec() })
    }

    pub fn empty(opcode: u8, seq: u8) -> Self {
        Self { opcode, seq, payload: Vec::new() }
    }

    pub fn payload(&self) -> &[u8] {
        &self.payload
    }

    pub fn wire_len(&self) -> usize {
        HEADER_LEN + self.payload.len()
    }

    pub fn encode_into(&self, out: &mut Vec<u8>) {
        out.push(self.opcode);
        out.push(self.seq);
        out.push(self.payload.len() as u8);
        out.extend_from_slice(&self.payload);
    }

    pub fn encode(&self) -> Vec<u8> {
        let mut v = Vec::with_capacity(self.wire_len());
        self.encode_into(&mut v);
        v
    }
}

/// Reassembles frames from arbitrary stream chunks. A header announcing more
/// than 17 payload bytes is reported and dropped, and decoding resumes after it.
#[derive(Debug, Default)]
pub struct FrameDecoder {
    buf: Vec<u8>,
}

impl FrameDecoder {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, bytes: &[u8]) {
        self.buf.extend_from_slice(bytes);
    }

    pub fn pending(&self) -> usize {
        self.buf.len()
    }

    pub fn clear(&mut self) {
        self.buf.clear();
    }

    pub fn next_frame(&mut self) -> Option<Result<Frame, FrameError>> {
        if self.buf.len() < HEADER_LEN {
            return None;
        }
        let (opcode, seq, len) = (self.buf[0], self.buf[1], self.buf[2]);
        if len as usize > MAX_PAYLOAD {
            self.buf.drain(..HEADER_LEN);
            return Some(Err(FrameError::Malformed { opcode, seq, len }));
        }
        let total = HEADER_LEN + len as usize;
        if self.buf.len() < total {
            return None;
        }
        let payload = self.buf[HEADER_LEN..total].to_vec();
        self.buf.drain(..total);
        Some(Ok(Frame { opcode, seq, payload }))
    }
}
