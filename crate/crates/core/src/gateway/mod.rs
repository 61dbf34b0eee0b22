//! Headless gateway: discovers devices, relays their realtime stream,
//! downloads flash history with reconstructed timestamps, and forwards
//! everything to the time-series service through a durable spool.

pub mod backfill;
pub mod client;
pub mod discovery;
pub mod session;
pub mod transport;
pub mod uploader;

pub use backfill::{record_timestamp, BackfillLedger, IdGap};
pub use client::{DeviceClient, DeviceInfo};
pub use discovery::{scan, DeviceDescriptor, Discovery, RegistryDiscovery, StaticDiscovery};
pub use session::{to_json_points, BackfillReport, DeviceSession, StreamEvent};
pub use transport::{SimLink, SimLinkControl, TcpLink, Transport};
pub use uploader::{HttpSink, LocalCsv, Sink, Spool, SwitchableSink, Uploader};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("device disconnected")]
    Disconnected,
    #[error("timed out waiting for the device")]
    Timeout,
    #[error("transport: {0}")]
    Transport(String),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("device rejected request (code {code}, retained window {window:?})")]
    Nak { code: u8, window: Option<(u16, u16)> },
    #[error("flash dump integrity failure: {0}")]
    Integrity(String),
    #[error("service: {0}")]
    Service(String),
    #[error("batch mixes realtime and backfill points")]
    MixedSources,
    #[error("empty batch")]
    EmptyBatch,
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}
