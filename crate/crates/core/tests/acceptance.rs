//! Acceptance suite: one PASS/FAIL line per criterion on stdout.
//!
//! Tests take a shared lock so the timing-sensitive ones never compete for
//! the CPU with the training-heavy ones.

use std::io::Write;
use std::net::UdpSocket;
use std::sync::{Arc, Mutex, MutexGuard};
use std::time::{Duration, Instant};

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use armpose::calib::{kendall_tau, relative_pressure};
use armpose::dataset::{merge_nearest, session_seed, synth_session, Corpus, EmuConfig, DEFAULT_PAIR_TOL_MS};
use armpose::estimate::{detect_modes, select_mode, ArmPose, ModeConfig, SelectContext};
use armpose::eval::{bench_matrix, BenchConfig};
use armpose::nn::{
    decode_prediction, train, Arch, Hyper, ModelInput, ModelSpec, TargetCodec, TrainData, TrainedModel, TrainingMeta,
};
use armpose::rotmath::{matrix_to_quat, quat_to_matrix, random_rotation, sixd_decode, Quaternion, SixD, Vec3};
use armpose::stream::{
    emulator_packets, replay, send_packets, spawn_server, wire::MAGIC, SensorPacket, ServeConfig, PACKET_LEN,
};

static SERIAL: Mutex<()> = Mutex::new(());

fn serial() -> MutexGuard<'static, ()> {
    SERIAL.lock().unwrap_or_else(|e| e.into_inner())
}

/// Prints the verdict line past the test harness's capture, then asserts.
fn verdict(n: u32, name: &str, pass: bool, detail: String) {
    let line = format!("acceptance {n} {name}: {} ({detail})\n", if pass { "PASS" } else { "FAIL" });
    let mut out = std::io::stdout().lock();
    let _ = out.write_all(line.as_bytes());
    let _ = out.flush();
    assert!(pass, "criterion {n} failed: {detail}");
}

fn rel_diff(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / na.max(nb).max(1e-12)
}

fn median(v: &mut [f64]) -> f64 {
    v.sort_by(f64::total_cmp);
    v[v.len() / 2]
}

#[test]
fn criterion_1_rotation_codecs() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    let mut worst = 0.0f64;
    for _ in 0..10_000 {
        let r = quat_to_matrix(random_rotation(&mut rng));
        let back = sixd_decode(&SixD::encode(&r)).unwrap();
        worst = worst.max(back.frobenius_distance(&r));
    }
    // Full turn about a tilted axis: 6D moves smoothly, the w >= 0
    // quaternion flips sign at half a turn.
    let axis = Vec3::new(0.3, 1.0, -0.2);
    let steps = 2000;
    let mut six = Vec::new();
    let mut quats = Vec::new();
    for k in 0..=steps {
        let r = quat_to_matrix(Quaternion::from_axis_angle(axis, 2.0 * std::f64::consts::PI * k as f64 / steps as f64));
        six.push(SixD::encode(&r).0);
        quats.push(matrix_to_quat(&r).unwrap().to_array());
    }
    let step = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let mut six_steps: Vec<f64> = six.windows(2).map(|w| step(&w[0], &w[1])).collect();
    let mut q_steps: Vec<f64> = quats.windows(2).map(|w| step(&w[0], &w[1])).collect();
    let six_max = six_steps.iter().copied().fold(0.0, f64::max);
    let q_max = q_steps.iter().copied().fold(0.0, f64::max);
    let (six_med, q_med) = (median(&mut six_steps), median(&mut q_steps));
    let flipped = quats.windows(2).any(|w| w[0][1] * w[1][1] < 0.0 && q_max > 10.0 * q_med);
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-6 && six_max < 10.0 * six_med && flipped && secs < 5.0;
    verdict(
        1,
        "rotation codecs",
        pass,
        format!(
            "max Frobenius {worst:.2e}; 6D max/median step {:.2}; quaternion max/median step {:.1}, sign flip {flipped}; {secs:.2} s",
            six_max / six_med,
            q_max / q_med
        ),
    );
}

#[test]
fn criterion_2_kinematic_invariants() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut worst = 0.0f64;
    let mut xyz_violations = 0;
    let n = 10_000;
    for i in 0..n {
        let codec = [TargetCodec::Polar, TargetCodec::SixD, TargetCodec::Quat][i % 3];
        let (l_u, l_l) = (rng.random_range(0.2..0.4), rng.random_range(0.2..0.35));
        let raw: Vec<f64> = (0..codec.dims()).map(|_| rng.random_range(-2.0..2.0)).collect();
        let p = decode_prediction(&raw, l_u, l_l, codec).unwrap();
        worst = worst.max((p.p_e.norm() - l_u).abs()).max(((p.p_w - p.p_e).norm() - l_l).abs());

        let raw: Vec<f64> = (0..6).map(|_| rng.random_range(-0.6..0.6)).collect();
        let p = decode_prediction(&raw, l_u, l_l, TargetCodec::Xyz).unwrap();
        if (p.p_e.norm() - l_u).abs() > 1e-9 || ((p.p_w - p.p_e).norm() - l_l).abs() > 1e-9 {
            xyz_violations += 1;
        }
    }
    let secs = start.elapsed().as_secs_f64();
    let pass = worst < 1e-9 && xyz_violations > n * 9 / 10 && secs < 5.0;
    verdict(
        2,
        "kinematic invariants",
        pass,
        format!("max bone-length error {worst:.2e}; XYZ violates on {xyz_violations}/{n}; {secs:.2} s"),
    );
}

#[test]
fn criterion_3_calibration_effect() {
    let _g = serial();
    let start = Instant::now();
    let (mut raw, mut rel, mut wrist_y) = (Vec::new(), Vec::new(), Vec::new());
    for s in 0..10 {
        let cfg = EmuConfig { seed: session_seed(3, s), duration_s: 60.0, ..EmuConfig::default() };
        let session = synth_session(&cfg).unwrap();
        let state = session.calibrate().unwrap();
        let merged = merge_nearest(&session.sensors, &session.truths, DEFAULT_PAIR_TOL_MS).unwrap();
        for p in merged.pairs.iter().filter(|p| p.sensor.t >= state.captured_at) {
            raw.push(p.sensor.pres);
            rel.push(relative_pressure(p.sensor.pres, &state));
            wrist_y.push(p.truth.positions().unwrap().1.y);
        }
    }
    let tau_raw = kendall_tau(&raw, &wrist_y).unwrap();
    let tau_rel = kendall_tau(&rel, &wrist_y).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let pass = tau_raw.abs() < 0.15 && tau_rel <= -0.25 && secs < 30.0;
    verdict(
        3,
        "calibration effect",
        pass,
        format!("tau(raw pressure, wrist y) {tau_raw:.3}; tau(relative pressure, wrist y) {tau_rel:.3}; n {}; {secs:.1} s", raw.len()),
    );
}

fn random_input(arch: Arch, rng: &mut ChaCha8Rng) -> ModelInput {
    let mut frame = || armpose::dataset::FeatureVector(std::array::from_fn(|_| rng.random_range(-1.0..1.0)));
    match arch {
        Arch::Feedforward => ModelInput::Frame(frame()),
        Arch::Recurrent => {
            let steps = std::array::from_fn(|_| frame());
            ModelInput::Sequence(armpose::dataset::SequenceSample { steps, dt: [0.0, 0.02, 0.02, 0.02, 0.02, 0.02] })
        }
    }
}

/// Worst relative error between backpropagated and central-difference
/// gradients over `draws` random parameter, input and dropout draws.
fn worst_gradient_error(arch: Arch, draws: u64) -> f64 {
    let spec = ModelSpec { width: 8, depth: 2, ..ModelSpec::new(arch, TargetCodec::SixD) };
    let mut worst = 0.0f64;
    for draw in 0..draws {
        let mut rng = ChaCha8Rng::seed_from_u64(4000 + draw);
        let total = TrainedModel::init(spec, 0).unwrap().param_count();
        let params: Vec<f64> = (0..total).map(|_| rng.random_range(-0.6..0.6)).collect();
        let model = TrainedModel::from_parts(spec, params.clone(), TrainingMeta::default()).unwrap();
        let inputs: Vec<ModelInput> = (0..3).map(|_| random_input(arch, &mut rng)).collect();
        let w = Array2::from_shape_fn((3, spec.output_dim()), |_| rng.random_range(-1.0..1.0));
        let mask_seed = Some(draw);
        let analytic = model.gradient(&inputs, mask_seed, w.view()).unwrap();
        let loss = |p: &[f64]| (&model.forward_batch(p, &inputs, mask_seed).unwrap() * &w).sum();
        let h = 1e-5;
        let mut p = params;
        let numeric: Vec<f64> = (0..p.len())
            .map(|k| {
                let orig = p[k];
                p[k] = orig + h;
                let up = loss(&p);
                p[k] = orig - h;
                let down = loss(&p);
                p[k] = orig;
                (up - down) / (2.0 * h)
            })
            .collect();
        worst = worst.max(rel_diff(&analytic, &numeric));
    }
    worst
}

#[test]
fn criterion_4_gradient_checks() {
    let _g = serial();
    let start = Instant::now();
    let ff = worst_gradient_error(Arch::Feedforward, 100);
    let rnn = worst_gradient_error(Arch::Recurrent, 100);
    let secs = start.elapsed().as_secs_f64();
    let pass = ff < 1e-4 && rnn < 1e-4 && secs < 60.0;
    verdict(
        4,
        "gradient checks",
        pass,
        format!("worst relative error ff {ff:.2e}, rnn {rnn:.2e} over 100 draws each; {secs:.1} s"),
    );
}

/// About 20k windows: 8 sessions of 56 s, less the 6 s prelude each.
fn bench_corpus() -> Corpus {
    Corpus::synthesize(&EmuConfig { seed: 2024, duration_s: 56.0, ..EmuConfig::default() }, 8).unwrap()
}

fn check_ordering(n: u32, name: &str, cfg: &BenchConfig, budget_s: f64) {
    let start = Instant::now();
    let corpus = bench_corpus();
    let report = bench_matrix(&corpus, cfg, None).unwrap();
    let secs = start.elapsed().as_secs_f64();
    let mut detail = format!("{} samples, {} folds; ", corpus.len(), cfg.folds);
    let mut pass = report.cells.iter().all(|c| c.error.is_none());
    for c in &report.cells {
        if let (Some(w), Some(e), Some(m)) = (c.wrist, c.elbow, c.combined) {
            detail += &format!("{} combined {:.2} cm (wrist {:.2}, elbow {:.2}); ", c.label(), m.mean * 100.0, w.mean * 100.0, e.mean * 100.0);
            if c.codec.is_constrained() && e.mean > w.mean {
                pass = false;
            }
        } else {
            detail += &format!("{} failed: {:?}; ", c.label(), c.error);
        }
    }
    let best = report.cell(Arch::Recurrent, TargetCodec::SixD).and_then(|c| c.combined);
    let worst = report.cell(Arch::Feedforward, TargetCodec::Quat).and_then(|c| c.combined);
    match (best, worst) {
        (Some(b), Some(w)) => pass &= b.mean <= w.mean,
        _ => pass = false,
    }
    pass &= secs < budget_s;
    detail += &format!("{secs:.0} s");
    verdict(n, name, pass, detail);
}

#[test]
fn criterion_5_benchmark_ordering_smoke() {
    let _g = serial();
    let cfg = BenchConfig {
        cells: vec![(Arch::Recurrent, TargetCodec::SixD), (Arch::Feedforward, TargetCodec::Quat)],
        hyper: Hyper { seed: 7, ..BenchConfig::desk().hyper },
        ..BenchConfig::desk()
    };
    check_ordering(5, "benchmark ordering (2-cell smoke)", &cfg, 300.0);
}

#[test]
#[ignore = "full 8-cell matrix, tens of minutes on one core"]
fn criterion_5_benchmark_ordering_full_matrix() {
    let _g = serial();
    let cfg = BenchConfig { hyper: Hyper { seed: 7, ..BenchConfig::desk().hyper }, ..BenchConfig::desk() };
    check_ordering(5, "benchmark ordering (full matrix)", &cfg, 3600.0);
}

#[test]
fn criterion_6_throughput() {
    let _g = serial();
    // Full-size recurrent model, briefly trained so the weights are not
    // just the initialization.
    let spec = ModelSpec::new(Arch::Recurrent, TargetCodec::SixD);
    let corpus = Corpus::synthesize(&EmuConfig { seed: 60, duration_s: 40.0, ..EmuConfig::default() }, 1).unwrap();
    let data = TrainData::from_corpus(&corpus, &spec).unwrap();
    let n = data.len();
    let fit: Vec<usize> = (0..n * 9 / 10).collect();
    let val: Vec<usize> = (n * 9 / 10..n).collect();
    let hyper = Hyper { epochs: 2, seed: 6, ..Hyper::default() };
    let (model, _) = train(spec, &data.subset(&fit), &data.subset(&val), &hyper).unwrap();

    // 6 s of calibration prelude, then just over 30 s of running frames.
    let emu = EmuConfig { seed: 61, duration_s: 36.5, upper_arm_m: Some(0.30), lower_arm_m: Some(0.26), ..EmuConfig::default() };
    let (_, packets) = emulator_packets(&emu).unwrap();
    let cfg = ServeConfig { bind: "127.0.0.1:0".into(), n_passes: 150, seed: 6, idle_timeout_s: Some(1.0), ..ServeConfig::default() };
    let handle = spawn_server(Arc::new(model), cfg, Box::new(std::io::sink())).unwrap();
    let target = handle.local_addr().to_string();
    let pacing = send_packets(&packets, &target, Duration::from_millis(20)).unwrap();
    let report = handle.join().unwrap();
    let m = &report.metrics;
    let rate = if report.emit_span_s > 0.0 { (m.inferences.saturating_sub(1)) as f64 / report.emit_span_s } else { 0.0 };
    let frame_ms = 1000.0 / 50.0;
    let pass = report.emit_span_s >= 30.0 && rate >= 40.0 && m.latency_p99_ms < 3.0 * frame_ms;
    verdict(
        6,
        "throughput",
        pass,
        format!(
            "150 passes, width 128 x 4 LSTM: {} inferences over {:.1} s = {rate:.1}/s; latency p50 {:.1} ms p99 {:.1} ms max {:.1} ms; dropped {}; sender jitter p99 {:.2} ms",
            m.inferences, report.emit_span_s, m.latency_p50_ms, m.latency_p99_ms, m.latency_max_ms, m.dropped, pacing.jitter_p99_ms
        ),
    );
}

fn cloud(rng: &mut ChaCha8Rng, center: ArmPose, n: usize) -> Vec<ArmPose> {
    let noise = Normal::new(0.0, 0.02).unwrap();
    (0..n)
        .map(|_| {
            let c = center.coords();
            ArmPose::from_coords(std::array::from_fn(|i| c[i] + noise.sample(rng)))
        })
        .collect()
}

#[test]
fn criterion_7_multimodality() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let a = ArmPose::from_positions(Vec3::new(-0.1, -0.25, 0.1), Vec3::new(-0.1, -0.1, 0.35));
    let b = ArmPose::from_positions(a.p_e, a.p_w + Vec3::new(0.3, 0.0, 0.0));
    let mut two = cloud(&mut rng, a, 75);
    two.extend(cloud(&mut rng, b, 75));
    let one = cloud(&mut rng, a, 150);
    let cfg = ModeConfig::default();
    let modes_two = detect_modes(&two, &cfg);
    let modes_one = detect_modes(&one, &cfg);
    let near_b = ArmPose::from_positions(b.p_e, b.p_w + Vec3::new(0.02, 0.0, 0.0));
    let picked = select_mode(&modes_two, &SelectContext { previous: Some(near_b), ..Default::default() }).unwrap();
    let near_a = ArmPose::from_positions(a.p_e, a.p_w);
    let picked_a = select_mode(&modes_two, &SelectContext { previous: Some(near_a), ..Default::default() }).unwrap();
    let again = detect_modes(&two, &cfg);
    let secs = start.elapsed().as_secs_f64();
    let pass = modes_two.len() == 2
        && modes_one.len() == 1
        && picked.p_w.distance(b.p_w) < 0.05
        && picked_a.p_w.distance(a.p_w) < 0.05
        && again == modes_two
        && secs < 1.0;
    verdict(
        7,
        "multimodality",
        pass,
        format!(
            "two clouds -> {} modes, one cloud -> {} mode(s); selection lands {:.1} cm / {:.1} cm from the nearer cloud; {secs:.3} s",
            modes_two.len(),
            modes_one.len(),
            picked.p_w.distance(b.p_w) * 100.0,
            picked_a.p_w.distance(a.p_w) * 100.0
        ),
    );
}

#[test]
fn criterion_8_wire_protocol() {
    let _g = serial();
    let start = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut mismatches = 0;
    for _ in 0..100_000 {
        let mut bytes = [0u8; PACKET_LEN];
        rng.fill(&mut bytes[..]);
        bytes[..4].copy_from_slice(MAGIC);
        let pkt = SensorPacket::decode(&bytes).unwrap();
        if pkt.encode() != bytes {
            mismatches += 1;
        }
    }
    let golden_hex = include_str!("fixtures/zero_packet.hex").trim();
    let zero = SensorPacket { seq: 0, t: 0.0, values: [0.0; 14] }.encode();
    let zero_hex: String = zero.iter().map(|b| format!("{b:02x}")).collect();
    let golden_ok = zero_hex == golden_hex && zero.len() == 72;

    // 20% random loss through the feedforward path, which serves every
    // running frame it receives.
    let model = TrainedModel::init(ModelSpec { width: 16, depth: 2, ..ModelSpec::new(Arch::Feedforward, TargetCodec::SixD) }, 8).unwrap();
    let emu = EmuConfig { seed: 88, duration_s: 20.0, upper_arm_m: Some(0.3), lower_arm_m: Some(0.26), ..EmuConfig::default() };
    let (_, packets) = emulator_packets(&emu).unwrap();
    let delivered: Vec<&[u8]> = packets.iter().filter(|_| rng.random::<f64>() >= 0.2).map(|p| &p[..]).collect();
    let cfg = ServeConfig { n_passes: 30, seed: 8, ..ServeConfig::default() };
    let out = replay(&model, delivered.iter().copied(), &cfg).unwrap();
    let running_at = out.transitions.last().map(|&(_, t)| t).unwrap_or(f64::INFINITY);
    let expected = delivered.iter().filter(|d| SensorPacket::decode(d).unwrap().t >= running_at).count();
    let loss_ok = out.lines.len() == expected && expected > 0 && out.transitions.len() == 2;
    let secs = start.elapsed().as_secs_f64();
    let pass = mismatches == 0 && golden_ok && loss_ok && secs < 30.0;
    verdict(
        8,
        "wire protocol",
        pass,
        format!(
            "100000 fuzzed datagrams, {mismatches} mismatches; golden fixture {}; 20% loss: {} of {} datagrams delivered, {} poses for {expected} running frames; {secs:.1} s",
            if golden_ok { "stable" } else { "CHANGED" },
            delivered.len(),
            packets.len(),
            out.lines.len()
        ),
    );
}

fn live_run(model: &Arc<TrainedModel>, packets: &[[u8; PACKET_LEN]], cfg: &ServeConfig) -> (Vec<u8>, armpose::stream::ServeReport) {
    #[derive(Clone)]
    struct Shared(Arc<Mutex<Vec<u8>>>);
    impl Write for Shared {
        fn write(&mut self, b: &[u8]) -> std::io::Result<usize> {
            self.0.lock().unwrap().write(b)
        }
        fn flush(&mut self) -> std::io::Result<()> {
            Ok(())
        }
    }
    let buf = Shared(Arc::new(Mutex::new(Vec::new())));
    let handle = spawn_server(Arc::clone(model), cfg.clone(), Box::new(buf.clone())).unwrap();
    let sock = UdpSocket::bind("127.0.0.1:0").unwrap();
    sock.connect(handle.local_addr()).unwrap();
    for p in packets {
        sock.send(p).unwrap();
        std::thread::sleep(Duration::from_millis(5));
    }
    let report = handle.join().unwrap();
    let bytes = buf.0.lock().unwrap().clone();
    (bytes, report)
}

#[test]
fn criterion_9_end_to_end_determinism() {
    let _g = serial();
    let model = Arc::new(
        TrainedModel::init(ModelSpec { width: 32, depth: 2, ..ModelSpec::new(Arch::Recurrent, TargetCodec::SixD) }, 9).unwrap(),
    );
    let emu = EmuConfig { seed: 99, duration_s: 10.0, upper_arm_m: Some(0.3), lower_arm_m: Some(0.26), ..EmuConfig::default() };
    let (_, packets) = emulator_packets(&emu).unwrap();
    let capture = tempfile::NamedTempFile::new().unwrap();
    armpose::stream::write_capture(capture.path(), &packets).unwrap();
    let packets = armpose::stream::read_capture(capture.path()).unwrap();
    let cfg = ServeConfig { bind: "127.0.0.1:0".into(), n_passes: 150, seed: 1234, idle_timeout_s: Some(0.5), ..ServeConfig::default() };
    let (a, ra) = live_run(&model, &packets, &cfg);
    let (b, rb) = live_run(&model, &packets, &cfg);
    let offline = replay(&model, packets.iter().map(|p| &p[..]), &cfg).unwrap();
    let offline_bytes: Vec<u8> = offline.lines.iter().flat_map(|l| format!("{l}\n").into_bytes()).collect();
    let complete = |r: &armpose::stream::ServeReport| r.metrics.packets_in == packets.len() as u64 && r.metrics.dropped == 0;
    let lines = a.iter().filter(|&&c| c == b'\n').count();
    let pass = a == b && a == offline_bytes && lines > 0 && complete(&ra) && complete(&rb);
    verdict(
        9,
        "end-to-end determinism",
        pass,
        format!(
            "{} datagrams served twice: {lines} lines, {} bytes, runs identical {}, equal to offline replay {}; drops {}/{}",
            packets.len(),
            a.len(),
            a == b,
            a == offline_bytes,
            ra.metrics.dropped,
            rb.metrics.dropped
        ),
    );
}
