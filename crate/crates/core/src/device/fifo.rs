//! Circular record store backed by an (optional) flash image file.
//!
//! File layout: an 8-byte header `head u32 LE | tail u32 LE` followed by
//! `capacity / 16` record slots. `head` and `tail` run modulo `2 * slots`, so
//! `head == tail` means empty and `head - tail == slots` means full.

use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::Path;

use thiserror::Error;

use super::record::{FlashRecord, RECORD_LEN};

pub const DEFAULT_CAPACITY_BYTES: u64 = 8 * 1024 * 1024;
pub const HEADER_LEN: u64 = 8;
/// Ids are 16-bit; at most one lap of them is addressable.
pub const ID_SPACE: u32 = 1 << 16;

#[derive(Debug, Error)]
pub enum FifoError {
    #[error("requested records are not retained (available: {window:?})")]
    NotRetained { window: Option<(u16, u16)> },
    #[error("range runs backwards: from {from} is newer than to {to}")]
    BadRange { from: u16, to: u16 },
    #[error("capacity must be a positive multiple of 16 bytes, got {0}")]
    InvalidCapacity(u64),
    #[error("flash image {found} bytes, expected {expected}")]
    ImageSize { expected: u64, found: u64 },
    #[error("corrupt flash header (head {head}, tail {tail})")]
    CorruptHeader { head: u32, tail: u32 },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Oldest and newest id of the contiguous, unambiguous retained window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct IdWindow {
    pub oldest_id: u16,
    pub latest_id: u16,
    pub count: u32,
}

#[derive(Debug)]
pub struct FlashFifo {
    slots: u32,
    head: u32,
    tail: u32,
    storage: Vec<u8>,
    file: Option<File>,
}

impl FlashFifo {
    pub fn in_memory(capacity_bytes: u64) -> Result<Self, FifoError> {
        let slots = slots_for(capacity_bytes)?;
        Ok(Self {
            slots,
            head: 0,
            tail: 0,
            storage: vec![0u8; capacity_bytes as usize],
            file: None,
        })
    }

    /// Opens or creates a flash image. An existing image must match the capacity.
    pub fn open(path: &Path, capacity_bytes: u64) -> Result<Self, FifoError> {
        let slots = slots_for(capacity_bytes)?;
        let expected = HEADER_LEN + capacity_bytes;
        let mut file = OpenOptions::new().read(true).write(true).create(true).truncate(false).open(path)?;
        let found = file.metadata()?.len();
        if found == 0 {
            file.set_len(expected)?;
            let mut fifo = Self { slots, head: 0, tail: 0, storage: vec![0u8; capacity_bytes as usize], file: Some(file) };
            fifo.write_header()?;
            return Ok(fifo);
        }
        if found != expected {
            return Err(FifoError::ImageSize { expected, found });
        }
        let mut header = [0u8; HEADER_LEN as usize];
        file.seek(SeekFrom::Start(0))?;
        file.read_exact(&mut header)?;
        let head = u32::from_le_bytes(header[0..4].try_into().unwrap());
        let tail = u32::from_le_bytes(header[4..8].try_into().unwrap());
        let ring = 2 * slots;
        if head >= ring || tail >= ring || (head + ring - tail) % ring > slots {
            return Err(FifoError::CorruptHeader { head, tail });
        }
        let mut storage = vec![0u8; capacity_bytes as usize];
        file.read_exact(&mut storage)?;
        Ok(Self { slots, head, tail, storage, file: Some(file) })
    }

    pub fn slots(&self) -> u32 {
        self.slots
    }

    pub fn len(&self) -> u32 {
        let ring = 2 * self.slots;
        (self.head + ring - self.tail) % ring
    }

    pub fn is_empty(&self) -> bool {
        self.head == self.tail
    }

    pub fn head_tail(&self) -> (u32, u32) {
        (self.head, self.tail)
    }

    /// Appends a record, evicting the oldest when full.
    pub fn append(&mut self, rec: &FlashRecord) -> Result<(), FifoError> {
        let ring = 2 * self.slots;
        let slot = self.head % self.slots;
        let off = slot as usize * RECORD_LEN;
        let bytes = rec.encode();
        self.storage[off..off + RECORD_LEN].copy_from_slice(&bytes);
        if self.len() == self.slots {
            self.tail = (self.tail + 1) % ring;
        }
        self.head = (self.head + 1) % ring;
        if let Some(file) = self.file.as_mut() {
            file.seek(SeekFrom::Start(HEADER_LEN + off as u64))?;
            file.write_all(&bytes)?;
            self.write_header()?;
        }
        Ok(())
    }

    fn write_header(&mut self) -> Result<(), FifoError> {
        let mut header = [0u8; HEADER_LEN as usize];
        header[0..4].copy_from_slice(&self.head.to_le_bytes());
        header[4..8].copy_from_slice(&self.tail.to_le_bytes());
        if let Some(file) = self.file.as_mut() {
            file.seek(SeekFrom::Start(0))?;
            file.write_all(&header)?;
            file.flush()?;
        }
        Ok(())
    }

    /// `i`-th oldest retained record.
    pub fn get(&self, i: u32) -> Option<FlashRecord> {
        if i >= self.len() {
            return None;
        }
        let slot = (self.tail + i) % self.slots;
        let off = slot as usize * RECORD_LEN;
        FlashRecord::decode(&self.storage[off..off + RECORD_LEN]).ok()
    }

    pub fn latest(&self) -> Option<FlashRecord> {
        self.len().checked_sub(1).and_then(|i| self.get(i))
    }

    pub fn iter(&self) -> impl Iterator<Item = FlashRecord> + '_ {
        (0..self.len()).filter_map(move |i| self.get(i))
    }

    /// Walks back from the newest record while ids keep getting strictly
    /// older on the 16-bit ring. Calls `f(record, distance_from_latest)`
    /// newest first; `f` returns false to stop early.
    fn walk_window(&self, mut f: impl FnMut(&FlashRecord, u16) -> bool) -> Option<IdWindow> {
        let latest = self.latest()?;
        let len = self.len();
        let mut oldest = latest;
        let mut count = 0u32;
        let mut prev_dist: Option<u16> = None;
        for k in 0..len {
            let rec = self.get(len - 1 - k)?;
            let dist = latest.rec_id.wrapping_sub(rec.rec_id);
            if prev_dist.is_some_and(|p| dist <= p) {
                break;
            }
            prev_dist = Some(dist);
            oldest = rec;
            count += 1;
            if !f(&rec, dist) {
                break;
            }
        }
        Some(IdWindow { oldest_id: oldest.rec_id, latest_id: latest.rec_id, count })
    }

    pub fn window(&self) -> Option<IdWindow> {
        self.walk_window(|_, _| true)
    }

    /// Records with ids in `[from_id, to_id]` (ring order), oldest first.
    pub fn read_range(&self, from_id: u16, to_id: u16) -> Result<Vec<FlashRecord>, FifoError> {
        let window = self.window().ok_or(FifoError::NotRetained { window: None })?;
        let d_from = window.latest_id.wrapping_sub(from_id);
        let d_to = window.latest_id.wrapping_sub(to_id);
        if d_to > d_from {
            return Err(FifoError::BadRange { from: from_id, to: to_id });
        }
        let d_oldest = window.latest_id.wrapping_sub(window.oldest_id);
        if d_from > d_oldest {
            return Err(FifoError::NotRetained {
                window: Some((window.oldest_id, window.latest_id)),
            });
        }
        let mut out = Vec::new();
        self.walk_window(|rec, dist| {
            if dist > d_from {
                return false;
            }
            if dist >= d_to {
                out.push(*rec);
            }
            true
        });
        out.reverse();
        Ok(out)
    }
}

fn slots_for(capacity_bytes: u64) -> Result<u32, FifoError> {
    if capacity_bytes == 0 || !capacity_bytes.is_multiple_of(RECORD_LEN as u64) || capacity_bytes / 16 > u32::MAX as u64 / 2 {
        return Err(FifoError::InvalidCapacity(capacity_bytes));
    }
    Ok((capacity_bytes / RECORD_LEN as u64) as u32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rec(id: u16) -> FlashRecord {
        FlashRecord { rec_type: 1, rec_id: id, v1: id as f32, v2: 25.0, v3: 40.0 }
    }

    #[test]
    fn default_capacity_holds_a_hundred_days() {
        let f = FlashFifo::in_memory(DEFAULT_CAPACITY_BYTES).unwrap();
        assert_eq!(f.slots(), 524_288);
        assert!(f.slots() >= 100 * 24 * 60);
    }

    #[test]
    fn append_then_read() {
        let mut f = FlashFifo::in_memory(1024).unwrap();
        f.append(&rec(0)).unwrap();
        assert_eq!(f.read_range(0, 0).unwrap(), vec![rec(0)]);
    }

    #[test]
    fn overflow_evicts_oldest() {
        let mut f = FlashFifo::in_memory(16 * 8).unwrap();
        for i in 0..9u16 {
            f.append(&rec(i)).unwrap();
        }
        assert_eq!(f.len(), 8);
        assert_eq!(f.get(0).unwrap().rec_id, 1);
        assert!(matches!(
            f.read_range(0, 8),
            Err(FifoError::NotRetained { window: Some((1, 8)) })
        ));
        assert_eq!(f.read_range(1, 8).unwrap().len(), 8);
    }

    #[test]
    fn empty_reads_are_not_retained() {
        let f = FlashFifo::in_memory(1024).unwrap();
        assert!(matches!(f.read_range(0, 0), Err(FifoError::NotRetained { window: None })));
    }

    #[test]
    fn backwards_range_rejected() {
        let mut f = FlashFifo::in_memory(1024).unwrap();
        for i in 0..10 {
            f.append(&rec(i)).unwrap();
        }
        assert!(matches!(f.read_range(5, 2), Err(FifoError::BadRange { .. })));
    }

    #[test]
    fn ranges_across_id_wrap() {
        let mut f = FlashFifo::in_memory(1024).unwrap();
        for i in 0..20u16 {
            f.append(&rec(65530u16.wrapping_add(i))).unwrap();
        }
        let got = f.read_range(65534, 3).unwrap();
        let ids: Vec<u16> = got.iter().map(|r| r.rec_id).collect();
        assert_eq!(ids, vec![65534, 65535, 0, 1, 2, 3]);
    }

    #[test]
    fn gaps_are_skipped() {
        let mut f = FlashFifo::in_memory(1024).unwrap();
        for i in [0u16, 1, 3, 4, 7] {
            f.append(&rec(i)).unwrap();
        }
        let ids: Vec<u16> = f.read_range(1, 6).unwrap().iter().map(|r| r.rec_id).collect();
        assert_eq!(ids, vec![1, 3, 4]);
    }

    #[test]
    fn window_stops_at_one_id_lap() {
        let mut f = FlashFifo::in_memory(16 * 70_000).unwrap();
        for i in 0..70_000u32 {
            f.append(&rec(i as u16)).unwrap();
        }
        let w = f.window().unwrap();
        assert_eq!(w.count, ID_SPACE);
        assert_eq!(w.latest_id, (69_999u32 % ID_SPACE) as u16);
        assert_eq!(w.oldest_id, w.latest_id.wrapping_add(1));
    }

    #[test]
    fn persistence_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("flash.bin");
        let cap = 16 * 2048;
        {
            let mut f = FlashFifo::open(&path, cap).unwrap();
            for i in 0..1000 {
                f.append(&rec(i)).unwrap();
            }
        }
        let image = std::fs::read(&path).unwrap();
        assert_eq!(image.len() as u64, HEADER_LEN + cap);
        assert_eq!(&image[0..4], &1000u32.to_le_bytes());
        assert_eq!(&image[4..8], &0u32.to_le_bytes());
        let f = FlashFifo::open(&path, cap).unwrap();
        let back: Vec<_> = f.iter().collect();
        assert_eq!(back.len(), 1000);
        assert!(back.iter().enumerate().all(|(i, r)| r.bit_eq(&rec(i as u16))));
        assert!(matches!(FlashFifo::open(&path, cap * 2), Err(FifoError::ImageSize { .. })));
    }

    #[test]
    fn invalid_capacity() {
        assert!(FlashFifo::in_memory(0).is_err());
        assert!(FlashFifo::in_memory(17).is_err());
    }

    proptest! {
        #[test]
        fn below_capacity_nothing_is_lost(n in 1usize..500, start: u16) {
            let mut f = FlashFifo::in_memory(16 * 512).unwrap();
            for i in 0..n {
                f.append(&rec(start.wrapping_add(i as u16))).unwrap();
            }
            let latest = start.wrapping_add(n as u16 - 1);
            let got = f.read_range(start, latest).unwrap();
            prop_assert_eq!(got.len(), n);
            for (i, r) in got.iter().enumerate() {
                prop_assert_eq!(r.rec_id, start.wrapping_add(i as u16));
            }
        }
    }
}
