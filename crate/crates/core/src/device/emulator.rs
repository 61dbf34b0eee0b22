//! One device: a virtual-clock event loop fed one analog input per second.

use std::collections::VecDeque;
use std::path::PathBuf;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::afe::{acquire, auto_gain, AnalogInput, EnvSensor, GainTable, SensorSample, GAIN_STEPS};
use super::fifo::{FifoError, FlashFifo, DEFAULT_CAPACITY_BYTES};
use super::frame::{Frame, FrameDecoder, FrameError, MAX_PAYLOAD};
use super::protocol::{
    dump_checksum, op, DumpBegin, DumpEnd, FlashReadRequest, InfoPayload, Measurement, Nak,
    NakCode,
};
use super::record::MinuteAverager;
use super::DeviceError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DeviceConfig {
    pub name: String,
    pub fw_major: u8,
    pub fw_minor: u8,
    pub gain_table: GainTable,
    pub initial_gain_index: u8,
    /// Gain whose count scale the stored and streamed alcohol values use.
    pub norm_gain_index: u8,
    pub flash_capacity_bytes: u64,
    /// Flash image; `None` keeps the FIFO in memory.
    pub flash_path: Option<PathBuf>,
    /// Seeds the per-unit temperature/humidity sensor error.
    pub seed: u64,
    /// Apply the datasheet-bounded T/RH sensor error; off gives an ideal sensor.
    pub env_sensor_error: bool,
}

impl Default for DeviceConfig {
    fn default() -> Self {
        Self {
            name: "TAC-01".into(),
            fw_major: 1,
            fw_minor: 0,
            gain_table: GainTable::default(),
            initial_gain_index: 7,
            norm_gain_index: 7,
            flash_capacity_bytes: DEFAULT_CAPACITY_BYTES,
            flash_path: None,
            seed: 1,
            env_sensor_error: true,
        }
    }
}

impl DeviceConfig {
    pub fn named(name: impl Into<String>) -> Self {
        Self { name: name.into(), ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), DeviceError> {
        self.gain_table.validate()?;
        if self.name.is_empty() || self.name.len() > MAX_PAYLOAD {
            return Err(DeviceError::Config(format!(
                "device name must be 1..={MAX_PAYLOAD} bytes"
            )));
        }
        if self.initial_gain_index as usize >= GAIN_STEPS || self.norm_gain_index as usize >= GAIN_STEPS {
            return Err(DeviceError::Config("gain index out of range".into()));
        }
        Ok(())
    }
}

pub struct Emulator {
    cfg: DeviceConfig,
    fifo: FlashFifo,
    env_sensor: EnvSensor,
    gain_index: u8,
    averager: MinuteAverager,
    minute_buf: Vec<SensorSample>,
    uptime_s: u64,
    subscribed: bool,
    push_seq: u8,
    pushes_sent: u64,
    decoder: FrameDecoder,
    outbox: VecDeque<Frame>,
}

impl Emulator {
    /// Boots the device. With a flash image on disk, record ids resume after
    /// the newest stored record.
    pub fn new(cfg: DeviceConfig) -> Result<Self, DeviceError> {
        cfg.validate()?;
        let fifo = match &cfg.flash_path {
            Some(p) => FlashFifo::open(p, cfg.flash_capacity_bytes)?,
            None => FlashFifo::in_memory(cfg.flash_capacity_bytes)?,
        };
        let next_id = fifo.latest().map_or(0, |r| r.rec_id.wrapping_add(1));
        let env_sensor = if cfg.env_sensor_error {
            EnvSensor::with_random_error(&mut ChaCha8Rng::seed_from_u64(cfg.seed))
        } else {
            EnvSensor::ideal()
        };
        Ok(Self {
            gain_index: cfg.initial_gain_index,
            averager: MinuteAverager::new(next_id, cfg.norm_gain_index),
            cfg,
            fifo,
            env_sensor,
            minute_buf: Vec::with_capacity(60),
            uptime_s: 0,
            subscribed: false,
            push_seq: 0,
            pushes_sent: 0,
            decoder: FrameDecoder::new(),
            outbox: VecDeque::new(),
        })
    }

    pub fn name(&self) -> &str {
        &self.cfg.name
    }

    pub fn config(&self) -> &DeviceConfig {
        &self.cfg
    }

    pub fn fifo(&self) -> &FlashFifo {
        &self.fifo
    }

    pub fn gain_index(&self) -> u8 {
        self.gain_index
    }

    pub fn uptime_s(&self) -> u64 {
        self.uptime_s
    }

    pub fn is_subscribed(&self) -> bool {
        self.subscribed
    }

    /// Measurement frames handed to the link since boot. Frames still queued
    /// when the link drops are not counted.
    pub fn pushes_sent(&self) -> u64 {
        self.pushes_sent
    }

    /// Id the next minute record will carry.
    pub fn next_rec_id(&self) -> u16 {
        self.averager.next_id()
    }

    /// One virtual second. `None` means no reading this tick (sensor off);
    /// a minute with no readings still consumes an id.
    pub fn tick(&mut self, input: Option<AnalogInput>) -> Result<Option<SensorSample>, DeviceError> {
        let sample = input.map(|inp| acquire(&inp, self.gain_index, &self.cfg.gain_table, &self.env_sensor));
        if let Some(s) = sample {
            self.minute_buf.push(s);
            if self.subscribed {
                self.push_measurement(&s);
            }
            self.gain_index = auto_gain(&s);
        }
        self.uptime_s += 1;
        if self.uptime_s.is_multiple_of(60) {
            if let Some(rec) = self.averager.close(&self.minute_buf, &self.cfg.gain_table) {
                self.fifo.append(&rec)?;
            }
            self.minute_buf.clear();
        }
        Ok(sample)
    }

    fn push_measurement(&mut self, s: &SensorSample) {
        let alcohol = self
            .cfg
            .gain_table
            .normalize(f64::from(s.adc_counts), s.gain_index, self.cfg.norm_gain_index)
            .unwrap_or(f64::NAN);
        let m = Measurement { alcohol: alcohol as f32, temp_c: s.temp_c, rh_pct: s.rh_pct };
        let f = Frame::new(op::MEASUREMENT, self.push_seq, &m.encode()).expect("fits");
        self.push_seq = self.push_seq.wrapping_add(1);
        self.pushes_sent += 1;
        self.outbox.push_back(f);
    }

    /// Feeds raw transport bytes; complete frames are handled immediately.
    pub fn receive_bytes(&mut self, bytes: &[u8]) {
        self.decoder.push(bytes);
        while let Some(next) = self.decoder.next_frame() {
            match next {
                Ok(frame) => self.handle_frame(&frame),
                Err(FrameError::Malformed { opcode, seq, .. }) => {
                    self.nak(opcode, seq, NakCode::Malformed, None);
                }
                Err(FrameError::PayloadTooLong(_)) => {}
            }
        }
    }

    pub fn handle_frame(&mut self, frame: &Frame) {
        let (opcode, seq, p) = (frame.opcode, frame.seq, frame.payload());
        match opcode {
            op::GET_INFO if p.is_empty() => {
                let info = self.info();
                self.outbox.push_back(Frame::new(op::INFO, seq, &info.encode()).expect("fits"));
                let name = Frame::new(op::INFO_NAME, seq.wrapping_add(1), self.cfg.name.as_bytes())
                    .expect("name length validated");
                self.outbox.push_back(name);
            }
            op::SUBSCRIBE if p.is_empty() => {
                self.subscribed = true;
                self.ack(opcode, seq);
            }
            op::UNSUBSCRIBE if p.is_empty() => {
                self.subscribed = false;
                self.ack(opcode, seq);
            }
            op::SET_TIME_REF if p.len() == 8 => self.ack(opcode, seq),
            op::FLASH_READ => match FlashReadRequest::decode(p) {
                Some(req) => self.dump(req, seq),
                None => self.nak(opcode, seq, NakCode::Malformed, None),
            },
            op::GET_INFO | op::SUBSCRIBE | op::UNSUBSCRIBE | op::SET_TIME_REF => {
                self.nak(opcode, seq, NakCode::Malformed, None)
            }
            _ => self.nak(opcode, seq, NakCode::UnknownOpcode, None),
        }
    }

    pub fn info(&self) -> InfoPayload {
        let window = self.fifo.window();
        InfoPayload {
            latest_rec_id: window.map_or(self.averager.next_id().wrapping_sub(1), |w| w.latest_id),
            oldest_rec_id: window.map_or(self.averager.next_id(), |w| w.oldest_id),
            record_count: window.map_or(0, |w| w.count),
            fw_major: self.cfg.fw_major,
            fw_minor: self.cfg.fw_minor,
            has_records: window.is_some(),
            subscribed: self.subscribed,
        }
    }

    fn dump(&mut self, req: FlashReadRequest, seq: u8) {
        let records = match self.fifo.read_range(req.from_id, req.to_id) {
            Ok(r) => r,
            Err(FifoError::NotRetained { window }) => {
                return self.nak(op::FLASH_READ, seq, NakCode::NotRetained, window);
            }
            Err(_) => {
                let window = self.fifo.window().map(|w| (w.oldest_id, w.latest_id));
                return self.nak(op::FLASH_READ, seq, NakCode::BadRange, window);
            }
        };
        let bytes: Vec<[u8; 16]> = records.iter().map(|r| r.encode()).collect();
        let count = bytes.len() as u32;
        let begin = DumpBegin { from_id: req.from_id, to_id: req.to_id, count };
        self.outbox.push_back(Frame::new(op::DUMP_BEGIN, seq, &begin.encode()).expect("fits"));
        let mut s = seq;
        for b in &bytes {
            s = s.wrapping_add(1);
            self.outbox.push_back(Frame::new(op::DUMP_DATA, s, b).expect("fits"));
        }
        let end = DumpEnd { count, crc32: dump_checksum(&bytes) };
        self.outbox.push_back(Frame::new(op::DUMP_END, s.wrapping_add(1), &end.encode()).expect("fits"));
    }

    fn ack(&mut self, opcode: u8, seq: u8) {
        self.outbox.push_back(Frame::new(op::ACK, seq, &[opcode]).expect("fits"));
    }

    fn nak(&mut self, opcode: u8, seq: u8, code: NakCode, window: Option<(u16, u16)>) {
        let nak = Nak { rejected_opcode: opcode, code: code as u8, window };
        self.outbox.push_back(nak.frame(seq));
    }

    pub fn has_output(&self) -> bool {
        !self.outbox.is_empty()
    }

    pub fn take_frames(&mut self) -> Vec<Frame> {
        self.outbox.drain(..).collect()
    }

    /// Drains the outbox as wire bytes.
    pub fn take_output(&mut self) -> Vec<u8> {
        let mut out = Vec::with_capacity(self.outbox.len() * 20);
        for f in self.outbox.drain(..) {
            f.encode_into(&mut out);
        }
        out
    }

    /// Link dropped: the subscription ends and in-flight bytes are lost.
    /// Acquisition and flash logging carry on.
    pub fn disconnect(&mut self) {
        let undelivered = self.outbox.iter().filter(|f| f.opcode == op::MEASUREMENT).count();
        self.pushes_sent -= undelivered as u64;
        self.subscribed = false;
        self.decoder.clear();
        self.outbox.clear();
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::device::record::FlashRecord;

    fn small(name: &str) -> DeviceConfig {
        DeviceConfig { flash_capacity_bytes: 16 * 4096, env_sensor_error: false, ..DeviceConfig::named(name) }
    }

    fn input(na: f64) -> Option<AnalogInput> {
        Some(AnalogInput { current_na: na, temp_c: 30.0, rh_pct: 50.0 })
    }

    fn run(e: &mut Emulator, secs: u64, na: f64) {
        for _ in 0..secs {
            e.tick(input(na)).unwrap();
        }
    }

    fn decode_all(bytes: &[u8]) -> Vec<Frame> {
        let mut d = FrameDecoder::new();
        d.push(bytes);
        std::iter::from_fn(|| d.next_frame()).map(|f| f.unwrap()).collect()
    }

    #[test]
    fn one_record_per_minute() {
        let mut e = Emulator::new(small("TAC-01")).unwrap();
        run(&mut e, 600, 500.0);
        assert_eq!(e.fifo().len(), 10);
        let ids: Vec<u16> = e.fifo().iter().map(|r| r.rec_id).collect();
        assert_eq!(ids, (0..10).collect::<Vec<_>>());
    }

    #[test]
    fn sensor_off_minute_leaves_gap() {
        let mut e = Emulator::new(small("TAC-01")).unwrap();
        run(&mut e, 60, 500.0);
        for _ in 0..60 {
            e.tick(None).unwrap();
        }
        run(&mut e, 60, 500.0);
        let ids: Vec<u16> = e.fifo().iter().map(|r| r.rec_id).collect();
        assert_eq!(ids, vec![0, 2]);
    }

    #[test]
    fn get_info_reports_latest_id() {
        let mut e = Emulator::new(small("TAC-07")).unwrap();
        run(&mut e, 180, 500.0);
        e.receive_bytes(&Frame::empty(op::GET_INFO, 9).encode());
        let frames = decode_all(&e.take_output());
        assert_eq!(frames.len(), 2);
        let info = InfoPayload::decode(frames[0].payload()).unwrap();
        assert_eq!((info.latest_rec_id, info.oldest_rec_id, info.record_count), (2, 0, 3));
        assert_eq!(frames[1].payload(), b"TAC-07");
        assert_eq!((frames[0].seq, frames[1].seq), (9, 10));
    }

    #[test]
    fn subscribe_pushes_once_per_second() {
        let mut e = Emulator::new(small("TAC-01")).unwrap();
        e.receive_bytes(&Frame::empty(op::SUBSCRIBE, 1).encode());
        assert_eq!(e.take_frames()[0].opcode, op::ACK);
        run(&mut e, 3, 500.0);
        let frames = e.take_frames();
        assert_eq!(frames.len(), 3);
        assert!(frames.iter().all(|f| f.opcode == op::MEASUREMENT && f.payload().len() == 12));
        assert_eq!(frames.iter().map(|f| f.seq).collect::<Vec<_>>(), vec![0, 1, 2]);
        e.receive_bytes(&Frame::empty(op::UNSUBSCRIBE, 2).encode());
        e.take_frames();
        run(&mut e, 3, 500.0);
        assert!(!e.has_output());
    }

    #[test]
    fn flash_read_matches_fifo() {
        let mut e = Emulator::new(small("TAC-01")).unwrap();
        for k in 0..6000u64 {
            e.tick(input(100.0 + (k % 977) as f64)).unwrap();
        }
        let req = FlashReadRequest { from_id: 0, to_id: 99 };
        e.receive_bytes(&Frame::new(op::FLASH_READ, 200, &req.encode()).unwrap().encode());
        let wire = e.take_output();
        let frames = decode_all(&wire);
        assert!(wire.len() <= frames.len() * 20);
        assert_eq!(frames.len(), 102);
        let begin = DumpBegin::decode(frames[0].payload()).unwrap();
        assert_eq!(begin.count, 100);
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(f.seq, 200u8.wrapping_add(i as u8));
        }
        let got: Vec<FlashRecord> = frames[1..101]
            .iter()
            .map(|f| FlashRecord::decode(f.payload()).unwrap())
            .collect();
        let direct = e.fifo().read_range(0, 99).unwrap();
        assert_eq!(got.len(), 100);
        assert!(got.iter().zip(&direct).all(|(a, b)| a.bit_eq(b)));
        let end = DumpEnd::decode(frames[101].payload()).unwrap();
        let raw: Vec<[u8; 16]> = direct.iter().map(|r| r.encode()).collect();
        assert_eq!(end, DumpEnd { count: 100, crc32: dump_checksum(&raw) });
    }

    #[test]
    fn flash_read_outside_window_naks_with_range() {
        let mut e = Emulator::new(DeviceConfig { flash_capacity_bytes: 16 * 10, ..small("TAC-01") }).unwrap();
        run(&mut e, 60 * 15, 500.0);
        let req = FlashReadRequest { from_id: 0, to_id: 14 };
        e.receive_bytes(&Frame::new(op::FLASH_READ, 3, &req.encode()).unwrap().encode());
        let f = &e.take_frames()[0];
        assert_eq!(f.opcode, op::NAK);
        let nak = Nak::decode(f.payload()).unwrap();
        assert_eq!(nak.code, NakCode::NotRetained as u8);
        assert_eq!(nak.window, Some((5, 14)));
    }

    #[test]
    fn unknown_and_malformed_naks() {
        let mut e = Emulator::new(small("TAC-01")).unwrap();
        e.receive_bytes(&Frame::empty(0x42, 1).encode());
        e.receive_bytes(&Frame::new(op::FLASH_READ, 2, &[1, 2]).unwrap().encode());
        e.receive_bytes(&[op::GET_INFO, 3, 30]);
        let naks: Vec<Nak> = e.take_frames().iter().map(|f| Nak::decode(f.payload()).unwrap()).collect();
        assert_eq!(naks.iter().map(|n| n.code).collect::<Vec<_>>(), vec![1, 2, 2]);
    }

    #[test]
    fn streaming_continues_during_dump() {
        let mut e = Emulator::new(small("TAC-01")).unwrap();
        run(&mut e, 300, 500.0);
        e.receive_bytes(&Frame::empty(op::SUBSCRIBE, 0).encode());
        let req = FlashReadRequest { from_id: 0, to_id: 4 };
        e.receive_bytes(&Frame::new(op::FLASH_READ, 1, &req.encode()).unwrap().encode());
        e.tick(input(500.0)).unwrap();
        let frames = e.take_frames();
        assert_eq!(frames.iter().filter(|f| f.opcode == op::DUMP_DATA).count(), 5);
        assert_eq!(frames.iter().filter(|f| f.opcode == op::MEASUREMENT).count(), 1);
    }

    #[test]
    fn ids_resume_after_restart() {
        let dir = tempfile::tempdir().unwrap();
        let cfg = DeviceConfig { flash_path: Some(dir.path().join("flash.bin")), ..small("TAC-01") };
        let mut e = Emulator::new(cfg.clone()).unwrap();
        run(&mut e, 60 * 5, 500.0);
        let before: Vec<[u8; 16]> = e.fifo().iter().map(|r| r.encode()).collect();
        drop(e);
        let mut e = Emulator::new(cfg).unwrap();
        let after: Vec<[u8; 16]> = e.fifo().iter().map(|r| r.encode()).collect();
        assert_eq!(before, after);
        run(&mut e, 60, 500.0);
        assert_eq!(e.fifo().latest().unwrap().rec_id, 5);
    }

    #[test]
    fn same_input_same_bytes() {
        let go = || {
            let mut e = Emulator::new(DeviceConfig { env_sensor_error: true, ..small("TAC-01") }).unwrap();
            e.receive_bytes(&Frame::empty(op::SUBSCRIBE, 0).encode());
            let mut wire = Vec::new();
            for k in 0..300u64 {
                e.tick(input((k as f64 * 7.3).sin().abs() * 2000.0)).unwrap();
                wire.extend(e.take_output());
            }
            wire
        };
        assert_eq!(go(), go());
    }

    #[test]
    fn ramp_stays_in_band_except_switch_ticks() {
        // 0 -> 0.98 mA over 600 s; the top of the ramp is just in band at gain 0
        let mut e = Emulator::new(DeviceConfig { initial_gain_index: 7, ..small("TAC-01") }).unwrap();
        let mut out_of_band = Vec::new();
        let mut prev_gain = e.gain_index();
        for k in 0..600u64 {
            let na = 0.98e6 * k as f64 / 599.0;
            let s = e.tick(input(na)).unwrap().unwrap();
            let in_band = (410..=3686).contains(&s.adc_counts);
            if !in_band {
                out_of_band.push((k, s.gain_index, prev_gain));
            }
            prev_gain = e.gain_index();
        }
        // every excursion is immediately followed by a gain change, and the
        // excursions after the initial range-up come singly
        let after_start: Vec<_> = out_of_band.iter().filter(|(k, _, _)| *k > 10).collect();
        for w in after_start.windows(2) {
            assert!(w[1].0 > w[0].0 + 1, "consecutive out-of-band ticks at {:?}", w);
        }
        assert!(!after_start.is_empty());
    }
}
