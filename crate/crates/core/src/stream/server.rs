//! Inference server: a receiver thread (socket, decode, calibration, window)
//! feeds a bounded queue drained by an inference thread that writes one JSON
//! line per pose. A third thread logs metrics once per interval.
//!
//! When inference falls behind, only the newest pending frame is served and
//! every older one is dropped and counted, which keeps latency bounded.

use std::io::Write;
use std::net::{SocketAddr, UdpSocket};
use std::sync::atomic::{AtomicBool, AtomicU64, Ordering};
use std::sync::{Arc, Mutex};
use std::thread::{self, JoinHandle};
use std::time::{Duration, Instant};

use crossbeam_queue::ArrayQueue;
use serde::{Deserialize, Serialize};

use super::session::{Ingest, Job, SessionState};
use super::wire::SensorPacket;
use super::{StreamError, DEFAULT_LOWER_ARM_M, DEFAULT_UPPER_ARM_M, QUEUE_CAPACITY};
use crate::calib::Phase;
use crate::estimate::{mc_predict_with, select_mode, ArmPose, ModeConfig, SelectContext};
use crate::nn::{pass_seed, TargetCodec, TrainedModel};

const RECV_TIMEOUT: Duration = Duration::from_millis(20);

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeConfig {
    pub bind: String,
    pub n_passes: usize,
    pub seed: u64,
    pub upper_arm_m: f64,
    pub lower_arm_m: f64,
    pub modes: ModeConfig,
    /// Include every Monte-Carlo sample in the output lines.
    pub with_samples: bool,
    /// Refuse to start unless the model uses this codec.
    pub expected_codec: Option<TargetCodec>,
    pub duration_s: Option<f64>,
    /// Stop after this long without packets (once the first has arrived).
    pub idle_timeout_s: Option<f64>,
    pub max_packets: Option<u64>,
    pub metrics_interval_s: f64,
}

impl Default for ServeConfig {
    fn default() -> Self {
        ServeConfig {
            bind: "0.0.0.0:9870".into(),
            n_passes: 150,
            seed: 0,
            upper_arm_m: DEFAULT_UPPER_ARM_M,
            lower_arm_m: DEFAULT_LOWER_ARM_M,
            modes: ModeConfig::default(),
            with_samples: false,
            expected_codec: None,
            duration_s: None,
            idle_timeout_s: None,
            max_packets: None,
            metrics_interval_s: 1.0,
        }
    }
}

impl ServeConfig {
    fn check(&self, model: &TrainedModel) -> Result<(), StreamError> {
        let spec = model.spec();
        if let Some(c) = self.expected_codec {
            if c != spec.codec {
                return Err(StreamError::Startup(format!(
                    "model predicts {} but {} was requested",
                    spec.codec.name(),
                    c.name()
                )));
            }
        }
        if spec.dropout <= 0.0 {
            return Err(StreamError::Startup("model has no dropout, Monte-Carlo sampling is impossible".into()));
        }
        if self.n_passes < 2 {
            return Err(StreamError::Startup(format!("need at least 2 passes, got {}", self.n_passes)));
        }
        for l in [self.upper_arm_m, self.lower_arm_m] {
            if !(l.is_finite() && l > 0.0) {
                return Err(StreamError::Startup(format!("invalid bone length {l}")));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Default)]
pub struct Metrics {
    pub packets_in: AtomicU64,
    pub malformed: AtomicU64,
    pub duplicates: AtomicU64,
    pub out_of_order: AtomicU64,
    pub calibration_frames: AtomicU64,
    pub warmup_frames: AtomicU64,
    pub ready_frames: AtomicU64,
    pub dropped: AtomicU64,
    pub inferences: AtomicU64,
    pub errors: AtomicU64,
    latencies_us: Mutex<Vec<u64>>,
    per_interval: Mutex<Vec<u64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSnapshot {
    pub packets_in: u64,
    pub malformed: u64,
    pub duplicates: u64,
    pub out_of_order: u64,
    pub calibration_frames: u64,
    pub warmup_frames: u64,
    pub ready_frames: u64,
    pub dropped: u64,
    pub inferences: u64,
    pub errors: u64,
    pub latency_p50_ms: f64,
    pub latency_p99_ms: f64,
    pub latency_max_ms: f64,
}

fn percentile(sorted: &[u64], q: f64) -> f64 {
    if sorted.is_empty() {
        return 0.0;
    }
    let rank = ((q * sorted.len() as f64).ceil() as usize).clamp(1, sorted.len());
    sorted[rank - 1] as f64 / 1000.0
}

impl Metrics {
    fn bump(c: &AtomicU64) {
        c.fetch_add(1, Ordering::Relaxed);
    }

    fn record_latency(&self, d: Duration) {
        self.latencies_us.lock().expect("metrics lock").push(d.as_micros() as u64);
    }

    /// Receive-to-emit latencies in milliseconds, in emission order.
    pub fn latencies_ms(&self) -> Vec<f64> {
        self.latencies_us.lock().expect("metrics lock").iter().map(|&u| u as f64 / 1000.0).collect()
    }

    /// Inferences completed in each metrics interval so far.
    pub fn per_interval(&self) -> Vec<u64> {
        self.per_interval.lock().expect("metrics lock").clone()
    }

    pub fn snapshot(&self) -> MetricsSnapshot {
        let mut lat = self.latencies_us.lock().expect("metrics lock").clone();
        lat.sort_unstable();
        let get = |c: &AtomicU64| c.load(Ordering::Relaxed);
        MetricsSnapshot {
            packets_in: get(&self.packets_in),
            malformed: get(&self.malformed),
            duplicates: get(&self.duplicates),
            out_of_order: get(&self.out_of_order),
            calibration_frames: get(&self.calibration_frames),
            warmup_frames: get(&self.warmup_frames),
            ready_frames: get(&self.ready_frames),
            dropped: get(&self.dropped),
            inferences: get(&self.inferences),
            errors: get(&self.errors),
            latency_p50_ms: percentile(&lat, 0.5),
            latency_p99_ms: percentile(&lat, 0.99),
            latency_max_ms: lat.last().map_or(0.0, |&u| u as f64 / 1000.0),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ServeReport {
    pub metrics: MetricsSnapshot,
    pub transitions: Vec<(Phase, f64)>,
    pub per_interval: Vec<u64>,
    /// Wall time between the first and the last emitted pose.
    pub emit_span_s: f64,
}

/// Seed of the Monte-Carlo passes for frame `seq`.
pub fn frame_seed(master: u64, seq: u32) -> u64 {
    pass_seed(master, u64::from(seq))
}

fn handle_datagram(session: &mut SessionState, metrics: &Metrics, bytes: &[u8]) -> Option<Job> {
    Metrics::bump(&metrics.packets_in);
    let pkt = match SensorPacket::decode(bytes) {
        Ok(p) => p,
        Err(e) => {
            log::debug!("{e}");
            Metrics::bump(&metrics.malformed);
            return None;
        }
    };
    match session.ingest(&pkt) {
        Ok(Ingest::Ready(job)) => {
            Metrics::bump(&metrics.ready_frames);
            Some(job)
        }
        Ok(Ingest::Duplicate) => {
            Metrics::bump(&metrics.duplicates);
            None
        }
        Ok(Ingest::OutOfOrder) => {
            Metrics::bump(&metrics.out_of_order);
            None
        }
        Ok(Ingest::Calibrating(_)) => {
            Metrics::bump(&metrics.calibration_frames);
            None
        }
        Ok(Ingest::Warmup) => {
            Metrics::bump(&metrics.warmup_frames);
            None
        }
        Err(e) => {
            log::warn!("rejected packet {}: {e}", pkt.seq);
            Metrics::bump(&metrics.malformed);
            None
        }
    }
}

/// Runs Monte-Carlo inference for one frame and renders its JSON line. The
/// selected mode is the one nearest the previously selected pose.
fn infer_line(
    model: &TrainedModel,
    job: &Job,
    cfg: &ServeConfig,
    prev: &mut Option<ArmPose>,
) -> Result<String, StreamError> {
    let dist = mc_predict_with(model, &job.input, cfg.n_passes, frame_seed(cfg.seed, job.seq), &cfg.modes)?;
    let selected = select_mode(&dist.modes, &SelectContext { previous: *prev, ..Default::default() })?;
    *prev = Some(selected);
    let mut v = dist.to_json_value(cfg.with_samples);
    let obj = v.as_object_mut().expect("summary is an object");
    obj.insert("seq".into(), job.seq.into());
    obj.insert("t".into(), job.t.into());
    obj.insert("selected".into(), serde_json::to_value(selected).expect("pose serializes"));
    Ok(v.to_string())
}

#[derive(Debug, Clone)]
pub struct ReplayOutput {
    pub lines: Vec<String>,
    pub metrics: MetricsSnapshot,
    pub transitions: Vec<(Phase, f64)>,
}

/// Feeds recorded datagrams through the same session and inference path as
/// the server, synchronously and without drops.
pub fn replay<'a>(
    model: &TrainedModel,
    datagrams: impl IntoIterator<Item = &'a [u8]>,
    cfg: &ServeConfig,
) -> Result<ReplayOutput, StreamError> {
    cfg.check(model)?;
    let metrics = Metrics::default();
    let mut session = SessionState::new(model.spec().arch, cfg.upper_arm_m, cfg.lower_arm_m);
    let mut prev = None;
    let mut lines = Vec::new();
    for d in datagrams {
        if let Some(job) = handle_datagram(&mut session, &metrics, d) {
            lines.push(infer_line(model, &job, cfg, &mut prev)?);
            Metrics::bump(&metrics.inferences);
        }
    }
    Ok(ReplayOutput { lines, metrics: metrics.snapshot(), transitions: session.transitions().to_vec() })
}

pub struct ServerHandle {
    local_addr: SocketAddr,
    stop: Arc<AtomicBool>,
    finished: Arc<AtomicBool>,
    metrics: Arc<Metrics>,
    receiver: JoinHandle<SessionState>,
    worker: JoinHandle<Result<f64, StreamError>>,
    ticker: JoinHandle<()>,
}

impl ServerHandle {
    pub fn local_addr(&self) -> SocketAddr {
        self.local_addr
    }

    pub fn metrics(&self) -> Arc<Metrics> {
        Arc::clone(&self.metrics)
    }

    /// Asks the receiver to stop; pending frames are still served.
    pub fn stop(&self) {
        self.stop.store(true, Ordering::SeqCst);
    }

    pub fn join(self) -> Result<ServeReport, StreamError> {
        let session = self.receiver.join().map_err(|_| StreamError::Transport("receiver panicked".into()))?;
        let worker = self.worker.join().map_err(|_| StreamError::Transport("worker panicked".into()));
        self.finished.store(true, Ordering::SeqCst);
        let _ = self.ticker.join();
        let emit_span_s = worker??;
        Ok(ServeReport {
            metrics: self.metrics.snapshot(),
            transitions: session.transitions().to_vec(),
            per_interval: self.metrics.per_interval(),
            emit_span_s,
        })
    }
}

/// Binds the socket and starts the receiver, inference and metrics threads.
pub fn spawn_server(
    model: Arc<TrainedModel>,
    cfg: ServeConfig,
    mut sink: Box<dyn Write + Send>,
) -> Result<ServerHandle, StreamError> {
    cfg.check(&model)?;
    let socket = UdpSocket::bind(&cfg.bind).map_err(|e| StreamError::Transport(format!("bind {}: {e}", cfg.bind)))?;
    socket.set_read_timeout(Some(RECV_TIMEOUT))?;
    let local_addr = socket.local_addr()?;
    log::info!(
        "serving {} {} model on {local_addr} with {} passes",
        model.spec().arch.name(),
        model.spec().codec.name(),
        cfg.n_passes
    );

    let queue: Arc<ArrayQueue<(Job, Instant)>> = Arc::new(ArrayQueue::new(QUEUE_CAPACITY));
    let stop = Arc::new(AtomicBool::new(false));
    let recv_done = Arc::new(AtomicBool::new(false));
    let finished = Arc::new(AtomicBool::new(false));
    let metrics = Arc::new(Metrics::default());
    let arch = model.spec().arch;

    let worker = {
        let (queue, recv_done, metrics, cfg) = (Arc::clone(&queue), Arc::clone(&recv_done), Arc::clone(&metrics), cfg.clone());
        thread::Builder::new().name("inference".into()).spawn(move || -> Result<f64, StreamError> {
            let mut prev = None;
            let mut first_emit: Option<Instant> = None;
            let mut last_emit: Option<Instant> = None;
            loop {
                let mut next = None;
                while let Some(j) = queue.pop() {
                    if next.replace(j).is_some() {
                        Metrics::bump(&metrics.dropped);
                    }
                }
                let Some((job, received)) = next else {
                    if recv_done.load(Ordering::SeqCst) && queue.is_empty() {
                        break;
                    }
                    thread::park_timeout(Duration::from_millis(5));
                    continue;
                };
                match infer_line(&model, &job, &cfg, &mut prev) {
                    Ok(line) => {
                        writeln!(sink, "{line}")?;
                        sink.flush()?;
                        let now = Instant::now();
                        metrics.record_latency(now - received);
                        Metrics::bump(&metrics.inferences);
                        first_emit.get_or_insert(now);
                        last_emit = Some(now);
                    }
                    Err(e) => {
                        log::warn!("inference failed for frame {}: {e}", job.seq);
                        Metrics::bump(&metrics.errors);
                    }
                }
            }
            Ok(match (first_emit, last_emit) {
                (Some(a), Some(b)) => (b - a).as_secs_f64(),
                _ => 0.0,
            })
        })?
    };

    let receiver = {
        let (queue, stop, recv_done, metrics, cfg) =
            (Arc::clone(&queue), Arc::clone(&stop), Arc::clone(&recv_done), Arc::clone(&metrics), cfg.clone());
        let worker_thread = worker.thread().clone();
        thread::Builder::new().name("receiver".into()).spawn(move || {
            let mut session = SessionState::new(arch, cfg.upper_arm_m, cfg.lower_arm_m);
            let start = Instant::now();
            let mut last_packet: Option<Instant> = None;
            let mut buf = [0u8; 2048];
            loop {
                if stop.load(Ordering::SeqCst) {
                    break;
                }
                if cfg.duration_s.is_some_and(|d| start.elapsed().as_secs_f64() >= d) {
                    break;
                }
                if let (Some(idle), Some(lp)) = (cfg.idle_timeout_s, last_packet) {
                    if lp.elapsed().as_secs_f64() >= idle {
                        log::info!("no packets for {idle} s, stopping");
                        break;
                    }
                }
                if cfg.max_packets.is_some_and(|m| metrics.packets_in.load(Ordering::Relaxed) >= m) {
                    break;
                }
                match socket.recv_from(&mut buf) {
                    Ok((n, _)) => {
                        let now = Instant::now();
                        last_packet = Some(now);
                        if let Some(job) = handle_datagram(&mut session, &metrics, &buf[..n]) {
                            if queue.force_push((job, now)).is_some() {
                                Metrics::bump(&metrics.dropped);
                            }
                            worker_thread.unpark();
                        }
                    }
                    Err(e) if matches!(e.kind(), std::io::ErrorKind::WouldBlock | std::io::ErrorKind::TimedOut) => {}
                    Err(e) => {
                        log::warn!("receive failed: {e}");
                    }
                }
            }
            recv_done.store(true, Ordering::SeqCst);
            worker_thread.unpark();
            session
        })?
    };

    let ticker = {
        let (metrics, finished) = (Arc::clone(&metrics), Arc::clone(&finished));
        let interval = Duration::from_secs_f64(cfg.metrics_interval_s.max(0.05));
        thread::Builder::new().name("metrics".into()).spawn(move || {
            let mut next = Instant::now() + interval;
            let (mut last_inf, mut last_pkts, mut last_lat) = (0u64, 0u64, 0usize);
            while !finished.load(Ordering::SeqCst) {
                thread::sleep(Duration::from_millis(20).min(interval));
                if Instant::now() < next {
                    continue;
                }
                next += interval;
                let snap = metrics.snapshot();
                let window: Vec<u64> = {
                    let lat = metrics.latencies_us.lock().expect("metrics lock");
                    let w = lat[last_lat..].to_vec();
                    last_lat = lat.len();
                    w
                };
                let mut sorted = window;
                sorted.sort_unstable();
                let inf = snap.inferences - last_inf;
                metrics.per_interval.lock().expect("metrics lock").push(inf);
                log::info!(
                    "frames in {}, inferences {}, dropped {}, malformed {}, out of order {}, duplicates {}, latency p50 {:.1} ms p99 {:.1} ms",
                    snap.packets_in - last_pkts,
                    inf,
                    snap.dropped,
                    snap.malformed,
                    snap.out_of_order,
                    snap.duplicates,
                    percentile(&sorted, 0.5),
                    percentile(&sorted, 0.99),
                );
                last_inf = snap.inferences;
                last_pkts = snap.packets_in;
            }
        })?
    };

    Ok(ServerHandle { local_addr, stop, finished, metrics, receiver, worker, ticker })
}

/// Serves until the configured stop condition and returns the final report.
pub fn serve_run(model: Arc<TrainedModel>, cfg: ServeConfig, sink: Box<dyn Write + Send>) -> Result<ServeReport, StreamError> {
    spawn_server(model, cfg, sink)?.join()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::EmuConfig;
    use crate::nn::{Arch, ModelSpec};
    use crate::stream::emulator::emulator_packets;

    fn small_model(arch: Arch) -> TrainedModel {
        TrainedModel::init(ModelSpec { width: 16, depth: 2, ..ModelSpec::new(arch, TargetCodec::SixD) }, 3).unwrap()
    }

    fn capture(seconds: f64, seed: u64) -> Vec<[u8; 72]> {
        let cfg = EmuConfig { seed, duration_s: seconds, upper_arm_m: Some(0.3), lower_arm_m: Some(0.26), ..EmuConfig::default() };
        emulator_packets(&cfg).unwrap().1
    }

    fn cfg() -> ServeConfig {
        ServeConfig { n_passes: 20, seed: 9, bind: "127.0.0.1:0".into(), ..ServeConfig::default() }
    }

    #[test]
    fn startup_checks() {
        let m = small_model(Arch::Feedforward);
        let bad = ServeConfig { expected_codec: Some(TargetCodec::Quat), ..cfg() };
        assert!(matches!(bad.check(&m), Err(StreamError::Startup(_))));
        assert!(matches!(ServeConfig { n_passes: 1, ..cfg() }.check(&m), Err(StreamError::Startup(_))));
        let no_dropout = TrainedModel::init(ModelSpec { dropout: 0.0, ..*m.spec() }, 1).unwrap();
        assert!(cfg().check(&no_dropout).is_err());
        assert!(cfg().check(&m).is_ok());
    }

    #[test]
    fn replay_is_deterministic_and_drops_duplicates() {
        let m = small_model(Arch::Recurrent);
        let pkts = capture(8.0, 4);
        let mut doubled: Vec<&[u8]> = Vec::new();
        for p in &pkts {
            doubled.push(p);
            doubled.push(p);
        }
        let a = replay(&m, pkts.iter().map(|p| &p[..]), &cfg()).unwrap();
        let b = replay(&m, doubled, &cfg()).unwrap();
        assert_eq!(a.lines, b.lines);
        assert_eq!(b.metrics.duplicates, pkts.len() as u64);
        assert_eq!(a.metrics.inferences, a.metrics.ready_frames);
        assert_eq!(a.transitions, vec![(Phase::AwaitRotationCal, 3000.0), (Phase::Running, 6000.0)]);
        // 100 running frames at 50 Hz, five of them fill the window.
        assert_eq!(a.lines.len(), 95);
        let v: serde_json::Value = serde_json::from_str(&a.lines[0]).unwrap();
        assert_eq!(v["seq"], 305);
        assert!(v["modes"].as_array().is_some() && v["selected"]["p_w"].as_array().is_some());
    }

    #[test]
    fn live_server_serves_a_capture() {
        let m = Arc::new(small_model(Arch::Feedforward));
        let pkts = capture(7.0, 5);
        let out = Arc::new(Mutex::new(Vec::<u8>::new()));
        struct Sink(Arc<Mutex<Vec<u8>>>);
        impl Write for Sink {
            fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
                self.0.lock().unwrap().write(b)
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let cfg = ServeConfig { idle_timeout_s: Some(0.5), metrics_interval_s: 0.2, ..cfg() };
        let handle = spawn_server(Arc::clone(&m), cfg.clone(), Box::new(Sink(Arc::clone(&out)))).unwrap();
        let addr = handle.local_addr();
        let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
        sock.send_to(b"junk", addr).unwrap();
        for p in &pkts {
            sock.send_to(p, addr).unwrap();
            thread::sleep(Duration::from_micros(500));
        }
        let report = handle.join().unwrap();
        assert_eq!(report.metrics.malformed, 1);
        assert_eq!(report.metrics.packets_in, pkts.len() as u64 + 1);
        assert_eq!(report.metrics.dropped, 0);
        let text = String::from_utf8(out.lock().unwrap().clone()).unwrap();
        let expected = replay(&m, pkts.iter().map(|p| &p[..]), &cfg).unwrap();
        assert_eq!(text.lines().collect::<Vec<_>>(), expected.lines.iter().map(String::as_str).collect::<Vec<_>>());
    }
}
