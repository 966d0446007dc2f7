//! UDP streaming: the wire format, the per-session calibration and window
//! state, the inference server and a paced emulator client.

pub mod emulator;
pub mod server;
pub mod session;
pub mod wire;

use thiserror::Error;

use crate::calib::CalibError;
use crate::dataset::DataError;
use crate::estimate::EstimateError;

pub use emulator::{emulator_packets, emulator_run, send_packets, EmulatorReport, PacingStats};
pub use server::{frame_seed, replay, serve_run, spawn_server, Metrics, MetricsSnapshot, ReplayOutput, ServeConfig, ServeReport, ServerHandle};
pub use session::{Ingest, Job, SessionState};
pub use wire::{decode_packet, encode_packet, read_capture, write_capture, SensorPacket, PACKET_LEN};

/// Nominal watch stream rate.
pub const STREAM_RATE_HZ: f64 = 50.0;
pub const QUEUE_CAPACITY: usize = 8;
/// Bone lengths assumed when the wearer's are not configured.
pub const DEFAULT_UPPER_ARM_M: f64 = 0.30;
pub const DEFAULT_LOWER_ARM_M: f64 = 0.26;

#[derive(Debug, Error)]
pub enum StreamError {
    #[error("malformed packet: {0}")]
    Malformed(String),
    #[error("transport: {0}")]
    Transport(String),
    #[error("startup: {0}")]
    Startup(String),
    #[error(transparent)]
    Calibration(#[from] CalibError),
    #[error(transparent)]
    Data(#[from] DataError),
    #[error(transparent)]
    Estimate(#[from] EstimateError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}
