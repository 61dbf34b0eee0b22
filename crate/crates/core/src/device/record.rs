use super::afe::{GainTable, SensorSample};
use super::DeviceError;

pub const RECORD_LEN: usize = 16;
/// `rec_type` of a one-minute measurement average.
pub const REC_TYPE_MINUTE_AVERAGE: u16 = 1;

/// Persisted minute record. Wire layout, little-endian:
/// `type u16 | id u16 | v1 f32 | v2 f32 | v3 f32`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlashRecord {
    pub rec_type: u16,
    pub rec_id: u16,
    /// Gain-normalized alcohol signal, reference-gain ADC counts.
    pub v1: f32,
    /// Temperature, °C.
    pub v2: f32,
    /// Relative humidity, %.
    pub v3: f32,
}

impl FlashRecord {
    pub fn encode(&self) -> [u8; RECORD_LEN] {
        let mut out = [0u8; RECORD_LEN];
        out[0..2].copy_from_slice(&self.rec_type.to_le_bytes());
        out[2..4].copy_from_slice(&self.rec_id.to_le_bytes());
        out[4..8].copy_from_slice(&self.v1.to_le_bytes());
        out[8..12].copy_from_slice(&self.v2.to_le_bytes());
        out[12..16].copy_from_slice(&self.v3.to_le_bytes());
        out
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DeviceError> {
        let b: &[u8; RECORD_LEN] = bytes
            .try_into()
            .map_err(|_| DeviceError::RecordLength(bytes.len()))?;
        let f = |i: usize| f32::from_le_bytes([b[i], b[i + 1], b[i + 2], b[i + 3]]);
        Ok(Self {
            rec_type: u16::from_le_bytes([b[0], b[1]]),
            rec_id: u16::from_le_bytes([b[2], b[3]]),
            v1: f(4),
            v2: f(8),
            v3: f(12),
        })
    }

    /// Bitwise equality, so NaN payloads compare equal to themselves.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.encode() == other.encode()
    }
}

/// Forward distance from `from` to `to` on the 16-bit id ring.
pub fn id_distance(from: u16, to: u16) -> u16 {
    to.wrapping_sub(from)
}

/// Closes one-minute buffers into records. The id advances every minute,
/// including empty minutes, which leave a visible gap.
#[derive(Debug, Clone)]
pub struct MinuteAverager {
    next_id: u16,
    norm_gain_index: u8,
}

impl MinuteAverager {
    pub fn new(next_id: u16, norm_gain_index: u8) -> Self {
        Self { next_id, norm_gain_index }
    }

    pub fn next_id(&self) -> u16 {
        self.next_id
    }

    pub fn close(&mut self, samples: &[SensorSample], table: &GainTable) -> Option<FlashRecord> {
        let id = self.next_id;
        self.next_id = self.next_id.wrapping_add(1);
        minute_average(samples, id, table, self.norm_gain_index)
    }
}

/// Mean of gain-normalized counts, temperature and humidity; `None` for an
/// empty buffer.
pub fn minute_average(
    samples: &[SensorSample],
    rec_id: u16,
    table: &GainTable,
    norm_gain_index: u8,
) -> Option<FlashRecord> {
    if samples.is_empty() {
        return None;
    }
    let n = samples.len() as f64;
    let (mut alcohol, mut temp, mut rh) = (0.0, 0.0, 0.0);
    for s in samples {
        alcohol += table
            .normalize(f64::from(s.adc_counts), s.gain_index, norm_gain_index)
            .unwrap_or(f64::NAN);
        temp += f64::from(s.temp_c);
        rh += f64::from(s.rh_pct);
    }
    Some(FlashRecord {
        rec_type: REC_TYPE_MINUTE_AVERAGE,
        rec_id,
        v1: (alcohol / n) as f32,
        v2: (temp / n) as f32,
        v3: (rh / n) as f32,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};

    fn s(counts: u16, gain: u8) -> SensorSample {
        SensorSample { adc_counts: counts, gain_index: gain, temp_c: 25.0, rh_pct: 50.0 }
    }

    #[test]
    fn golden_bytes() {
        let r = FlashRecord { rec_type: 1, rec_id: 2, v1: 1.5, v2: 25.0, v3: 50.0 };
        // 1.5f32 = 0x3FC00000, 25.0f32 = 0x41C80000, 50.0f32 = 0x42480000
        let expected = [
            0x01, 0x00, 0x02, 0x00, 0x00, 0x00, 0xC0, 0x3F, 0x00, 0x00, 0xC8, 0x41, 0x00, 0x00,
            0x48, 0x42,
        ];
        assert_eq!(r.encode(), expected);
        assert_eq!(FlashRecord::decode(&expected).unwrap(), r);
    }

    #[test]
    fn all_zero_bytes() {
        let r = FlashRecord::decode(&[0u8; 16]).unwrap();
        assert_eq!(r, FlashRecord { rec_type: 0, rec_id: 0, v1: 0.0, v2: 0.0, v3: 0.0 });
    }

    #[test]
    fn wrong_length_rejected() {
        assert!(matches!(FlashRecord::decode(&[0u8; 15]), Err(DeviceError::RecordLength(15))));
        assert!(FlashRecord::decode(&[0u8; 17]).is_err());
    }

    #[test]
    fn seeded_round_trip_ten_thousand() {
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..10_000 {
            let r = FlashRecord {
                rec_type: rng.gen(),
                rec_id: rng.gen(),
                v1: f32::from_bits(rng.gen()),
                v2: f32::from_bits(rng.gen()),
                v3: f32::from_bits(rng.gen()),
            };
            assert!(FlashRecord::decode(&r.encode()).unwrap().bit_eq(&r));
        }
    }

    #[test]
    fn identical_samples_average_to_themselves() {
        let t = GainTable::default();
        let buf = vec![s(1234, 7); 60];
        let r = minute_average(&buf, 9, &t, 7).unwrap();
        assert_eq!((r.v1, r.v2, r.v3, r.rec_id), (1234.0, 25.0, 50.0, 9));
    }

    #[test]
    fn alternating_extremes() {
        let t = GainTable::default();
        let buf: Vec<_> = (0..60).map(|i| s(if i % 2 == 0 { 0 } else { 4095 }, 7)).collect();
        assert_eq!(minute_average(&buf, 0, &t, 7).unwrap().v1, 2047.5);
    }

    #[test]
    fn gain_switch_is_normalized_per_sample() {
        let t = GainTable::default();
        // 30 samples at gain 6 (350k) then 30 at gain 7 (1M)
        let mut buf = vec![s(1000, 6); 30];
        buf.extend(vec![s(2000, 7); 30]);
        let by_hand = (30.0 * 1000.0 * (1.0e6 / 350_000.0) + 30.0 * 2000.0) / 60.0;
        let r = minute_average(&buf, 0, &t, 7).unwrap();
        assert!((f64::from(r.v1) - by_hand).abs() < 1e-3);
    }

    #[test]
    fn empty_minute_still_consumes_id() {
        let t = GainTable::default();
        let mut m = MinuteAverager::new(u16::MAX, 7);
        assert!(m.close(&[], &t).is_none());
        assert_eq!(m.next_id(), 0);
        assert_eq!(m.close(&[s(1, 7)], &t).unwrap().rec_id, 0);
        assert_eq!(m.next_id(), 1);
    }

    proptest! {
        #[test]
        fn codec_identity(t: u16, id: u16, a: u32, b: u32, c: u32) {
            let r = FlashRecord { rec_type: t, rec_id: id, v1: f32::from_bits(a), v2: f32::from_bits(b), v3: f32::from_bits(c) };
            let bytes = r.encode();
            prop_assert_eq!(bytes.len(), 16);
            prop_assert_eq!(FlashRecord::decode(&bytes).unwrap().encode(), bytes);
        }
    }
}
