//! Application-layer protocol carried in frames. Integers are little-endian.
//! See `docs/protocol.md` for the byte-level layout.

use super::frame::Frame;

pub mod op {
    pub const GET_INFO: u8 = 0x01;
    pub const SUBSCRIBE: u8 = 0x02;
    pub const UNSUBSCRIBE: u8 = 0x03;
    pub const FLASH_READ: u8 = 0x04;
    pub const SET_TIME_REF: u8 = 0x05;

    pub const ACK: u8 = 0x80;
    pub const INFO: u8 = 0x81;
    pub const INFO_NAME: u8 = 0x82;
    pub const MEASUREMENT: u8 = 0x90;
    pub const DUMP_BEGIN: u8 = 0xA0;
    pub const DUMP_DATA: u8 = 0xA1;
    pub const DUMP_END: u8 = 0xA2;
    pub const NAK: u8 = 0xFF;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[repr(u8)]
pub enum NakCode {
    UnknownOpcode = 1,
    Malformed = 2,
    NotRetained = 3,
    BadRange = 4,
}

impl NakCode {
    pub fn from_u8(v: u8) -> Option<Self> {
        Some(match v {
            1 => Self::UnknownOpcode,
            2 => Self::Malformed,
            3 => Self::NotRetained,
            4 => Self::BadRange,
            _ => return None,
        })
    }
}

fn u16_at(p: &[u8], i: usize) -> u16 {
    u16::from_le_bytes([p[i], p[i + 1]])
}

fn u32_at(p: &[u8], i: usize) -> u32 {
    u32::from_le_bytes([p[i], p[i + 1], p[i + 2], p[i + 3]])
}

fn f32_at(p: &[u8], i: usize) -> f32 {
    f32::from_le_bytes([p[i], p[i + 1], p[i + 2], p[i + 3]])
}

/// INFO payload: `latest u16 | oldest u16 | count u32 | fw_major | fw_minor | flags`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct InfoPayload {
    pub latest_rec_id: u16,
    pub oldest_rec_id: u16,
    pub record_count: u32,
    pub fw_major: u8,
    pub fw_minor: u8,
    pub has_records: bool,
    pub subscribed: bool,
}

impl InfoPayload {
    pub const LEN: usize = 11;

    pub fn encode(&self) -> [u8; Self::LEN] {
        let mut p = [0u8; Self::LEN];
        p[0..2].copy_from_slice(&self.latest_rec_id.to_le_bytes());
        p[2..4].copy_from_slice(&self.oldest_rec_id.to_le_bytes());
        p[4..8].copy_from_slice(&self.record_count.to_le_bytes());
        p[8] = self.fw_major;
        p[9] = self.fw_minor;
        p[10] = u8::from(self.has_records) | (u8::from(self.subscribed) << 1);
        p
    }

    pub fn decode(p: &[u8]) -> Option<Self> {
        (p.len() == Self::LEN).then(|| Self {
            latest_rec_id: u16_at(p, 0),
            oldest_rec_id: u16_at(p, 2),
            record_count: u32_at(p, 4),
            fw_major: p[8],
            fw_minor: p[9],
            has_records: p[10] & 1 != 0,
            subscribed: p[10] & 2 != 0,
        })
    }
}

/// Realtime push: alcohol, temperature, humidity as three f32.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Measurement {
    pub alcohol: f32,
    pub temp_c: f32,
    pub rh_pct: f32,
}

impl Measurement {
    pub const LEN: usize = 12;

    pub fn encode(&self) -> [u8; Self::LEN] {
        let mut p = [0u8; Self::LEN];
        p[0..4].copy_from_slice(&self.alcohol.to_le_bytes());
        p[4..8].copy_from_slice(&self.temp_c.to_le_bytes());
        p[8..12].copy_from_slice(&self.rh_pct.to_le_bytes());
        p
    }

    pub fn decode(p: &[u8]) -> Option<Self> {
        (p.len() == Self::LEN).then(|| Self {
            alcohol: f32_at(p, 0),
            temp_c: f32_at(p, 4),
            rh_pct: f32_at(p, 8),
        })
    }
}

/// FLASH_READ request: inclusive id range on the 16-bit ring.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FlashReadRequest {
    pub from_id: u16,
    pub to_id: u16,
}

impl FlashReadRequest {
    pub const LEN: usize = 4;

    pub fn encode(&self) -> [u8; Self::LEN] {
        let mut p = [0u8; Self::LEN];
        p[0..2].copy_from_slice(&self.from_id.to_le_bytes());
        p[2..4].copy_from_slice(&self.to_id.to_le_bytes());
        p
    }

    pub fn decode(p: &[u8]) -> Option<Self> {
        (p.len() == Self::LEN).then(|| Self { from_id: u16_at(p, 0), to_id: u16_at(p, 2) })
    }
}

/// DUMP_BEGIN: `from u16 | to u16 | count u32`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DumpBegin {
    pub from_id: u16,
    pub to_id: u16,
    pub count: u32,
}

impl DumpBegin {
    pub const LEN: usize = 8;

    pub fn encode(&self) -> [u8; Self::LEN] {
        let mut p = [0u8; Self::LEN];
        p[0..2].copy_from_slice(&self.from_id.to_le_bytes());
        p[2..4].copy_from_slice(&self.to_id.to_le_bytes());
        p[4..8].copy_from_slice(&self.count.to_le_bytes());
        p
    }

    pub fn decode(p: &[u8]) -> Option<Self> {
        (p.len() == Self::LEN).then(|| Self {
            from_id: u16_at(p, 0),
            to_id: u16_at(p, 2),
            count: u32_at(p, 4),
        })
    }
}

/// DUMP_END: `count u32 | crc32 u32` over the concatenated 16-byte records.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DumpEnd {
    pub count: u32,
    pub crc32: u32,
}

impl DumpEnd {
    pub const LEN: usize = 8;

    pub fn encode(&self) -> [u8; Self::LEN] {
        let mut p = [0u8; Self::LEN];
        p[0..4].copy_from_slice(&self.count.to_le_bytes());
        p[4..8].copy_from_slice(&self.crc32.to_le_bytes());
        p
    }

    pub fn decode(p: &[u8]) -> Option<Self> {
        (p.len() == Self::LEN).then(|| Self { count: u32_at(p, 0), crc32: u32_at(p, 4) })
    }
}

/// NAK: `rejected opcode | code | has_range | oldest u16 | latest u16`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Nak {
    pub rejected_opcode: u8,
    pub code: u8,
    pub window: Option<(u16, u16)>,
}

impl Nak {
    pub const LEN: usize = 7;

    pub fn frame(&self, seq: u8) -> Frame {
        let mut p = [0u8; Self::LEN];
        p[0] = self.rejected_opcode;
        p[1] = self.code;
        if let Some((oldest, latest)) = self.window {
            p[2] = 1;
            p[3..5].copy_from_slice(&oldest.to_le_bytes());
            p[5..7].copy_from_slice(&latest.to_le_bytes());
        }
        Frame::new(op::NAK, seq, &p).expect("nak fits in a frame")
    }

    pub fn decode(p: &[u8]) -> Option<Self> {
        (p.len() == Self::LEN).then(|| Self {
            rejected_opcode: p[0],
            code: p[1],
            window: (p[2] & 1 != 0).then(|| (u16_at(p, 3), u16_at(p, 5))),
        })
    }
}

/// CRC32 (IEEE) over concatenated record bytes, as sent in DUMP_END.
pub fn dump_checksum<'a>(records: impl IntoIterator<Item = &'a [u8; 16]>) -> u32 {
    let mut h = crc32fast::Hasher::new();
    for r in records {
        h.update(r);
    }
    h.finalize()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payloads_round_trip() {
        let info = InfoPayload {
            latest_rec_id: 513,
            oldest_rec_id: 2,
            record_count: 512,
            fw_major: 1,
            fw_minor: 4,
            has_records: true,
            subscribed: false,
        };
        assert_eq!(InfoPayload::decode(&info.encode()), Some(info));
        let m = Measurement { alcohol: 1340.5, temp_c: 31.2, rh_pct: 60.0 };
        assert_eq!(Measurement::decode(&m.encode()), Some(m));
        let nak = Nak { rejected_opcode: op::FLASH_READ, code: 3, window: Some((10, 20)) };
        assert_eq!(Nak::decode(nak.frame(5).payload()), Some(nak));
        assert!(InfoPayload::decode(&[0u8; 3]).is_none());
    }

    #[test]
    fn checksum_matches_reference_crc() {
        // CRC32/IEEE of "123456789" is 0xCBF43926; split across two blocks
        let a: [u8; 16] = *b"1234567890abcdef";
        let whole = crc32fast::hash(b"1234567890abcdef");
        assert_eq!(dump_checksum([&a]), whole);
        assert_eq!(crc32fast::hash(b"123456789"), 0xCBF4_3926);
    }
}
