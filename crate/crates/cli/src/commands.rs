use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use serde_json::json;

use armpose::dataset::{
    csv_read, csv_write, merge_nearest, session_seed, synth_session, Corpus, EmuConfig, NoiseConfig, PairedSample,
    SensorFrame, DEFAULT_PAIR_TOL_MS,
};
use armpose::calib::CalibrationState;
use armpose::estimate::{mc_predict, ModeConfig};
use armpose::eval::{
    aggregate_metrics, bench_matrix, evaluate_model, full_matrix, BenchConfig, Field, PURGE_GAP,
};
use armpose::nn::{
    load_model, save_model, train, Arch, Hyper, ModelInput, ModelSpec, TrainData, DEFAULT_FF_DEPTH, DEFAULT_RNN_DEPTH,
};
use armpose::stream::{
    emulator_packets, emulator_run, frame_seed, read_capture, replay, serve_run, write_capture, ServeConfig,
};

use crate::args::{
    BenchArgs, BenchProfile, CalibrateArgs, Cli, Command, EmulateArgs, EvalArgs, InferArgs, ServeArgs, SynthArgs,
    TrainArgs,
};

pub fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Synth(a) => synth(cli.seed, a),
        Command::Calibrate(a) => calibrate(a),
        Command::Train(a) => train_cmd(cli.seed, a),
        Command::Eval(a) => eval_cmd(a),
        Command::Bench(a) => bench(cli.seed, a),
        Command::Emulate(a) => emulate(cli.seed, a),
        Command::Serve(a) => serve(cli.seed, a),
        Command::Infer(a) => infer(cli.seed, a),
    }
}

fn output(target: &str) -> Result<Box<dyn Write + Send>> {
    Ok(if target == "-" {
        Box::new(std::io::stdout())
    } else {
        Box::new(BufWriter::new(File::create(target).with_context(|| format!("creating {target}"))?))
    })
}

fn write_json(path: &Path, value: &serde_json::Value) -> Result<()> {
    std::fs::write(path, serde_json::to_string_pretty(value)? + "\n").with_context(|| format!("writing {}", path.display()))
}

/// Resolves a `--data` argument to paired.csv files: the file itself, the
/// directory's paired.csv, or the paired.csv of each `session_*`
/// subdirectory in name order.
fn paired_files(path: &Path) -> Result<Vec<PathBuf>> {
    if !path.is_dir() {
        return Ok(vec![path.to_path_buf()]);
    }
    let direct = path.join("paired.csv");
    if direct.is_file() {
        return Ok(vec![direct]);
    }
    let mut subs: Vec<PathBuf> = std::fs::read_dir(path)
        .with_context(|| format!("reading {}", path.display()))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("paired.csv").is_file())
        .collect();
    subs.sort();
    if subs.is_empty() {
        bail!("no paired.csv under {}", path.display());
    }
    Ok(subs.into_iter().map(|p| p.join("paired.csv")).collect())
}

fn load_corpus(paths: &[PathBuf]) -> Result<Corpus> {
    let mut corpus = Corpus::default();
    let mut session = 0u32;
    for p in paths {
        for file in paired_files(p)? {
            let pairs: Vec<PairedSample> = csv_read(&file).with_context(|| format!("reading {}", file.display()))?;
            corpus.push_recording(session, &pairs).with_context(|| format!("calibrating {}", file.display()))?;
            session += 1;
        }
    }
    if corpus.is_empty() {
        bail!("no usable samples in the given data");
    }
    Ok(corpus)
}

fn synth(seed: u64, a: &SynthArgs) -> Result<()> {
    for i in 0..a.sessions {
        let dir = if a.sessions == 1 { a.out.clone() } else { a.out.join(format!("session_{i:02}")) };
        std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let cfg = EmuConfig {
            seed: session_seed(seed, i),
            duration_s: a.duration,
            upper_arm_m: a.upper_arm,
            lower_arm_m: a.lower_arm,
            noise: if a.no_noise { NoiseConfig::zero() } else { NoiseConfig::default() },
            ..EmuConfig::default()
        };
        let session = synth_session(&cfg)?;
        let merged = merge_nearest(&session.sensors, &session.truths, DEFAULT_PAIR_TOL_MS)?;
        csv_write(dir.join("sensor.csv"), &session.sensors)?;
        csv_write(dir.join("truth.csv"), &session.truths)?;
        csv_write(dir.join("paired.csv"), &merged.pairs)?;
        println!(
            "{}",
            json!({
                "dir": dir.display().to_string(),
                "sensor_frames": session.sensors.len(),
                "truth_frames": session.truths.len(),
                "paired": merged.pairs.len(),
                "upper_arm_m": session.upper_arm_m,
                "lower_arm_m": session.lower_arm_m,
            })
        );
    }
    Ok(())
}

fn calibrate(a: &CalibrateArgs) -> Result<()> {
    let frames: Vec<SensorFrame> = match csv_read::<SensorFrame>(&a.sensor) {
        Ok(f) => f,
        Err(_) => csv_read::<PairedSample>(&a.sensor)
            .with_context(|| format!("{} is neither a sensor nor a paired CSV", a.sensor.display()))?
            .into_iter()
            .map(|p| p.sensor)
            .collect(),
    };
    let state: CalibrationState = armpose::dataset::calibrate_frames(&frames)?;
    let text = state.to_json()?;
    if let Some(out) = &a.out {
        std::fs::write(out, format!("{text}\n")).with_context(|| format!("writing {}", out.display()))?;
    }
    println!("{text}");
    Ok(())
}

fn train_cmd(seed: u64, a: &TrainArgs) -> Result<()> {
    let corpus = load_corpus(&a.data)?;
    let depth = a.depth.map_or(
        match a.arch {
            Arch::Feedforward => DEFAULT_FF_DEPTH,
            Arch::Recurrent => DEFAULT_RNN_DEPTH,
        },
        |d| d as usize,
    );
    let spec = ModelSpec { width: a.width as usize, depth, dropout: a.dropout, ..ModelSpec::new(a.arch, a.codec) };
    spec.validate()?;
    let data = TrainData::from_corpus(&corpus, &spec)?;
    let n = data.len();
    let n_val = ((n as f64 * a.val_fraction).ceil() as usize).max(1);
    if n_val + PURGE_GAP >= n {
        bail!("{n} samples are too few to hold out {n_val} for validation");
    }
    let fit: Vec<usize> = (0..n - n_val - PURGE_GAP).collect();
    let val: Vec<usize> = (n - n_val..n).collect();
    let hyper = Hyper {
        epochs: a.epochs as usize,
        lr: a.lr,
        batch: a.batch as usize,
        patience: a.patience as usize,
        seed,
    };
    let (model, history) = train(spec, &data.subset(&fit), &data.subset(&val), &hyper)?;
    save_model(&model, &a.out).with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(h) = &a.history {
        history.save_csv(h).with_context(|| format!("writing {}", h.display()))?;
    }
    println!(
        "{}",
        json!({
            "model": a.out.display().to_string(),
            "arch": spec.arch.name(),
            "codec": spec.codec.name(),
            "params": model.param_count(),
            "train_samples": fit.len(),
            "val_samples": val.len(),
            "epochs_run": model.meta.epochs_run,
            "best_epoch": model.meta.best_epoch,
            "best_val_mae": model.meta.best_val_loss,
        })
    );
    Ok(())
}

fn eval_cmd(a: &EvalArgs) -> Result<()> {
    let model = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let corpus = load_corpus(&a.data)?;
    let idx: Vec<usize> = (0..corpus.len()).collect();
    let errors = evaluate_model(&model, &corpus, &idx)?;
    let mut summary = serde_json::Map::new();
    summary.insert("arch".into(), model.spec().arch.name().into());
    summary.insert("codec".into(), model.spec().codec.name().into());
    for f in Field::ALL {
        summary.insert(f.name().into(), serde_json::to_value(aggregate_metrics(&errors, f)?)?);
    }
    let value = serde_json::Value::Object(summary);
    if let Some(out) = &a.out {
        write_json(out, &value)?;
    }
    println!("{}", serde_json::to_string_pretty(&value)?);
    Ok(())
}

fn bench(seed: u64, a: &BenchArgs) -> Result<()> {
    let corpus = if a.data.is_empty() {
        let base = EmuConfig { seed, duration_s: a.session_duration, ..EmuConfig::default() };
        Corpus::synthesize(&base, a.sessions)?
    } else {
        load_corpus(&a.data)?
    };
    let base = match a.profile {
        BenchProfile::Full => BenchConfig::default(),
        BenchProfile::Desk => BenchConfig::desk(),
    };
    let mut cfg = BenchConfig {
        folds: a.folds as usize,
        split: a.split.into(),
        hyper: Hyper { seed, ..base.hyper },
        cells: if a.cells.is_empty() { full_matrix() } else { a.cells.clone() },
        ..base
    };
    let set = |v: Option<u64>, slot: &mut usize| {
        if let Some(v) = v {
            *slot = v as usize;
        }
    };
    set(a.width, &mut cfg.width);
    set(a.ff_depth, &mut cfg.ff_depth);
    set(a.rnn_depth, &mut cfg.rnn_depth);
    set(a.epochs, &mut cfg.hyper.epochs);
    set(a.patience, &mut cfg.hyper.patience);
    std::fs::create_dir_all(&a.out).with_context(|| format!("creating {}", a.out.display()))?;
    log::info!("benchmark over {} samples, {} cells, {} folds", corpus.len(), cfg.cells.len(), cfg.folds);
    let report = bench_matrix(&corpus, &cfg, Some(&a.out))?;
    report.write_results_csv(std::io::stdout().lock())?;
    let failed: Vec<String> = report.cells.iter().filter(|c| c.error.is_some()).map(|c| c.label()).collect();
    if !failed.is_empty() {
        bail!("cells failed: {}", failed.join(", "));
    }
    Ok(())
}

fn emulate(seed: u64, a: &EmulateArgs) -> Result<()> {
    let cfg = EmuConfig {
        seed,
        duration_s: a.duration,
        upper_arm_m: Some(a.upper_arm),
        lower_arm_m: Some(a.lower_arm),
        ..EmuConfig::default()
    };
    let mut report = serde_json::Map::new();
    if let Some(path) = &a.capture {
        let (_, packets) = emulator_packets(&cfg)?;
        write_capture(path, &packets).with_context(|| format!("writing {}", path.display()))?;
        report.insert("capture".into(), path.display().to_string().into());
        report.insert("packets_written".into(), packets.len().into());
    }
    if let Some(target) = &a.target {
        let r = emulator_run(&cfg, target, a.speed)?;
        log::info!(
            "sent {} packets in {:.2} s, jitter p99 {:.2} ms",
            r.packets_sent,
            r.duration_s,
            r.jitter_p99_ms
        );
        if let serde_json::Value::Object(m) = serde_json::to_value(&r)? {
            report.extend(m);
        }
    }
    let value = serde_json::Value::Object(report);
    if let Some(path) = &a.report {
        write_json(path, &value)?;
    }
    println!("{value}");
    Ok(())
}

fn serve(seed: u64, a: &ServeArgs) -> Result<()> {
    let model = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let cfg = ServeConfig {
        bind: a.bind.clone(),
        n_passes: a.passes as usize,
        seed,
        upper_arm_m: a.upper_arm,
        lower_arm_m: a.lower_arm,
        modes: ModeConfig { wcss_ratio: a.wcss_ratio, min_separation: a.min_separation },
        with_samples: a.with_samples,
        expected_codec: a.codec,
        duration_s: a.duration,
        idle_timeout_s: a.idle_timeout,
        max_packets: a.max_packets,
        metrics_interval_s: a.metrics_interval,
    };
    let report = if let Some(capture) = &a.replay {
        let packets = read_capture(capture).with_context(|| format!("reading {}", capture.display()))?;
        let out = replay(&model, packets.iter().map(|p| &p[..]), &cfg)?;
        let mut sink = output(&a.out)?;
        for line in &out.lines {
            writeln!(sink, "{line}")?;
        }
        sink.flush()?;
        json!({ "metrics": out.metrics, "transitions": out.transitions })
    } else {
        let r = serve_run(Arc::new(model), cfg, output(&a.out)?)?;
        serde_json::to_value(&r)?
    };
    log::info!("final metrics: {}", report["metrics"]);
    if let Some(path) = &a.report {
        write_json(path, &report)?;
    }
    Ok(())
}

fn infer(seed: u64, a: &InferArgs) -> Result<()> {
    let model = load_model(&a.model).with_context(|| format!("loading {}", a.model.display()))?;
    let files = paired_files(&a.data)?;
    if files.len() != 1 {
        bail!("infer takes one session, {} found under {}", files.len(), a.data.display());
    }
    let pairs: Vec<PairedSample> = csv_read(&files[0]).with_context(|| format!("reading {}", files[0].display()))?;
    let mut corpus = Corpus::default();
    corpus.push_recording(0, &pairs)?;
    let mut sink = output(&a.out)?;
    let n = a.limit.map_or(corpus.len(), |l| l.min(corpus.len()));
    for i in 0..n {
        let input = match model.spec().arch {
            Arch::Feedforward => ModelInput::Frame(corpus.records[i].features),
            Arch::Recurrent => ModelInput::Sequence(corpus.sequences[i]),
        };
        let dist = mc_predict(&model, &input, a.passes as usize, frame_seed(seed, i as u32))?;
        let mut v = dist.to_json_value(a.with_samples);
        let (p_e, p_w) = corpus.records[i].truth.positions()?;
        let obj = v.as_object_mut().expect("summary is an object");
        obj.insert("index".into(), i.into());
        obj.insert("t".into(), corpus.records[i].t.into());
        obj.insert("truth".into(), json!({ "p_e": p_e, "p_w": p_w }));
        writeln!(sink, "{v}")?;
    }
    sink.flush()?;
    Ok(())
}
