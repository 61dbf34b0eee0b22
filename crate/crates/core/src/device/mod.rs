//! Firmware emulation for the wearable: acquisition, minute records, flash
//! FIFO and the framed protocol spoken over a 20-byte-MTU byte stream.

pub mod afe;
pub mod emulator;
pub mod fifo;
pub mod frame;
pub mod protocol;
pub mod record;
pub mod server;

pub use afe::{acquire, auto_gain, AnalogInput, EnvSensor, GainTable, SensorSample};
pub use emulator::{DeviceConfig, Emulator};
pub use fifo::{FifoError, FlashFifo, IdWindow};
pub use frame::{Frame, FrameDecoder, FrameError};
pub use record::{minute_average, FlashRecord, MinuteAverager, RECORD_LEN};
pub use server::{DeviceServer, RegistryEntry, SignalSource, TraceSource};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DeviceError {
    #[error("invalid device config: {0}")]
    Config(String),
    #[error("record must be exactly 16 bytes, got {0}")]
    RecordLength(usize),
    #[error(transparent)]
    Fifo(#[from] FifoError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
