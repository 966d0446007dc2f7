//! Fixed 72-byte datagram: `WPK1`, `u32` sequence number, `f64` timestamp in
//! ms, then the 14 sensor values as `f32`, all little-endian.

use std::io::{Read, Write};
use std::path::Path;

use super::StreamError;
use crate::dataset::SensorFrame;

pub const PACKET_LEN: usize = 72;
pub const MAGIC: &[u8; 4] = b"WPK1";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SensorPacket {
    pub seq: u32,
    pub t: f64,
    pub values: [f32; 14],
}

impl SensorPacket {
    pub fn from_frame(frame: &SensorFrame, seq: u32) -> Self {
        SensorPacket { seq, t: frame.t, values: frame.values().map(|v| v as f32) }
    }

    pub fn to_frame(&self) -> SensorFrame {
        SensorFrame::from_values(self.t, &self.values.map(f64::from))
    }

    pub fn encode(&self) -> [u8; PACKET_LEN] {
        let mut b = [0u8; PACKET_LEN];
        b[..4].copy_from_slice(MAGIC);
        b[4..8].copy_from_slice(&self.seq.to_le_bytes());
        b[8..16].copy_from_slice(&self.t.to_le_bytes());
        for (i, v) in self.values.iter().enumerate() {
            b[16 + 4 * i..20 + 4 * i].copy_from_slice(&v.to_le_bytes());
        }
        b
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, StreamError> {
        if bytes.len() != PACKET_LEN {
            return Err(StreamError::Malformed(format!("{} bytes, expected {PACKET_LEN}", bytes.len())));
        }
        if &bytes[..4] != MAGIC {
            return Err(StreamError::Malformed("bad magic".into()));
        }
        let seq = u32::from_le_bytes(bytes[4..8].try_into().expect("4 bytes"));
        let t = f64::from_le_bytes(bytes[8..16].try_into().expect("8 bytes"));
        let values = std::array::from_fn(|i| f32::from_le_bytes(bytes[16 + 4 * i..20 + 4 * i].try_into().expect("4 bytes")));
        Ok(SensorPacket { seq, t, values })
    }
}

pub fn encode_packet(frame: &SensorFrame, seq: u32) -> [u8; PACKET_LEN] {
    SensorPacket::from_frame(frame, seq).encode()
}

pub fn decode_packet(bytes: &[u8]) -> Result<SensorPacket, StreamError> {
    SensorPacket::decode(bytes)
}

/// A capture file is the datagrams back to back.
pub fn write_capture(path: impl AsRef<Path>, packets: &[[u8; PACKET_LEN]]) -> Result<(), StreamError> {
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    for p in packets {
        f.write_all(p)?;
    }
    f.flush()?;
    Ok(())
}

pub fn read_capture(path: impl AsRef<Path>) -> Result<Vec<[u8; PACKET_LEN]>, StreamError> {
    let mut raw = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut raw)?;
    if raw.len() % PACKET_LEN != 0 {
        return Err(StreamError::Malformed(format!("capture length {} is not a multiple of {PACKET_LEN}", raw.len())));
    }
    Ok(raw.chunks_exact(PACKET_LEN).map(|c| c.try_into().expect("packet")).collect())
}
