//! Emulated watch client: synthesizes a session (calibration prelude, then
//! motion) and sends it over UDP at the sensor rate.

use std::net::{SocketAddr, ToSocketAddrs, UdpSocket};
use std::thread;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::wire::{encode_packet, PACKET_LEN};
use super::StreamError;
use crate::dataset::{synth_session, EmuConfig, Session};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmulatorReport {
    pub target: String,
    pub packets_sent: u64,
    pub first_seq: u32,
    pub last_seq: u32,
    pub gapless: bool,
    pub duration_s: f64,
    pub jitter_mean_ms: f64,
    pub jitter_p50_ms: f64,
    pub jitter_p99_ms: f64,
    pub jitter_max_ms: f64,
    pub upper_arm_m: f64,
    pub lower_arm_m: f64,
}

/// Generates the session and its datagrams, numbered from 0.
pub fn emulator_packets(cfg: &EmuConfig) -> Result<(Session, Vec<[u8; PACKET_LEN]>), StreamError> {
    let session = synth_session(cfg)?;
    let packets = session.sensors.iter().enumerate().map(|(i, f)| encode_packet(f, i as u32)).collect();
    Ok((session, packets))
}

fn resolve(target: &str) -> Result<SocketAddr, StreamError> {
    target
        .to_socket_addrs()
        .map_err(|e| StreamError::Transport(format!("cannot resolve {target}: {e}")))?
        .next()
        .ok_or_else(|| StreamError::Transport(format!("{target} resolves to no address")))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PacingStats {
    pub sent: u64,
    pub duration_s: f64,
    pub jitter_mean_ms: f64,
    pub jitter_p50_ms: f64,
    pub jitter_p99_ms: f64,
    pub jitter_max_ms: f64,
}

/// Sends datagrams every `period`, scheduled against a fixed start so errors
/// do not accumulate. Jitter is the lateness of each send against its slot.
/// A zero period sends back to back.
pub fn send_packets(packets: &[[u8; PACKET_LEN]], target: &str, period: Duration) -> Result<PacingStats, StreamError> {
    let addr = resolve(target)?;
    let bind = if addr.is_ipv4() { "0.0.0.0:0" } else { "[::]:0" };
    let socket = UdpSocket::bind(bind)?;
    socket.connect(addr).map_err(|e| StreamError::Transport(format!("{target}: {e}")))?;
    let start = Instant::now();
    let mut jitter = Vec::with_capacity(packets.len());
    for (i, p) in packets.iter().enumerate() {
        let slot = start + period * i as u32;
        let now = Instant::now();
        if slot > now {
            thread::sleep(slot - now);
        }
        let late = Instant::now().saturating_duration_since(slot);
        socket.send(p).map_err(|e| StreamError::Transport(format!("send to {target}: {e}")))?;
        jitter.push(late.as_secs_f64() * 1000.0);
    }
    let duration_s = start.elapsed().as_secs_f64();
    let mean = if jitter.is_empty() { 0.0 } else { jitter.iter().sum::<f64>() / jitter.len() as f64 };
    jitter.sort_by(f64::total_cmp);
    let pct = |q: f64| {
        if jitter.is_empty() {
            0.0
        } else {
            jitter[((q * jitter.len() as f64).ceil() as usize).clamp(1, jitter.len()) - 1]
        }
    };
    Ok(PacingStats {
        sent: packets.len() as u64,
        duration_s,
        jitter_mean_ms: mean,
        jitter_p50_ms: pct(0.5),
        jitter_p99_ms: pct(0.99),
        jitter_max_ms: jitter.last().copied().unwrap_or(0.0),
    })
}

/// Synthesizes a session and streams it to `target` at the sensor rate
/// multiplied by `speed`.
pub fn emulator_run(cfg: &EmuConfig, target: &str, speed: f64) -> Result<EmulatorReport, StreamError> {
    if !(speed > 0.0 && speed.is_finite()) {
        return Err(StreamError::Startup(format!("speed must be positive, got {speed}")));
    }
    resolve(target)?;
    let (session, packets) = emulator_packets(cfg)?;
    let seqs: Vec<u32> = packets.iter().map(|p| u32::from_le_bytes(p[4..8].try_into().expect("4 bytes"))).collect();
    let gapless = seqs.windows(2).all(|w| w[1] == w[0] + 1);
    log::info!("sending {} packets to {target}", packets.len());
    let stats = send_packets(&packets, target, Duration::from_secs_f64(1.0 / (cfg.sensor_rate_hz * speed)))?;
    Ok(EmulatorReport {
        target: target.to_string(),
        packets_sent: stats.sent,
        first_seq: seqs.first().copied().unwrap_or(0),
        last_seq: seqs.last().copied().unwrap_or(0),
        gapless,
        duration_s: stats.duration_s,
        jitter_mean_ms: stats.jitter_mean_ms,
        jitter_p50_ms: stats.jitter_p50_ms,
        jitter_p99_ms: stats.jitter_p99_ms,
        jitter_max_ms: stats.jitter_max_ms,
        upper_arm_m: session.upper_arm_m,
        lower_arm_m: session.lower_arm_m,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::stream::wire::decode_packet;

    #[test]
    fn ten_seconds_is_five_hundred_gapless_packets() {
        let cfg = EmuConfig { seed: 7, duration_s: 10.0, ..EmuConfig::default() };
        let (_, pkts) = emulator_packets(&cfg).unwrap();
        assert!((499..=501).contains(&pkts.len()), "{}", pkts.len());
        for (i, p) in pkts.iter().enumerate() {
            assert_eq!(decode_packet(p).unwrap().seq, i as u32);
        }
    }

    #[test]
    fn paced_run_reaches_a_listener() {
        let rx = UdpSocket::bind("127.0.0.1:0").unwrap();
        rx.set_read_timeout(Some(Duration::from_secs(2))).unwrap();
        let target = rx.local_addr().unwrap().to_string();
        let cfg = EmuConfig { seed: 1, duration_s: 6.5, ..EmuConfig::default() };
        let report = emulator_run(&cfg, &target, 1.0).unwrap();
        assert_eq!(report.packets_sent, 325);
        assert!(report.gapless);
        assert_eq!((report.first_seq, report.last_seq), (0, 324));
        assert!(report.duration_s > 6.0, "{}", report.duration_s);
        assert!(report.jitter_p99_ms < 5.0, "pacing jitter p99 {} ms", report.jitter_p99_ms);
        let mut buf = [0u8; 128];
        let (n, _) = rx.recv_from(&mut buf).unwrap();
        assert_eq!(n, PACKET_LEN);
    }

    #[test]
    fn unresolvable_target_is_a_transport_error() {
        let cfg = EmuConfig { seed: 1, duration_s: 7.0, ..EmuConfig::default() };
        assert!(matches!(emulator_run(&cfg, "no-such-host.invalid:9", 1.0), Err(StreamError::Transport(_))));
        assert!(matches!(emulator_run(&cfg, "not an address", 1.0), Err(StreamError::Transport(_))));
    }
}
