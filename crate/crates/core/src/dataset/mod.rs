//! Observation types, timestamp merging, feature assembly and sequence
//! stacking. The synthetic watch/mocap emulator lives in [`emulator`], CSV
//! persistence in [`csvio`].

pub mod csvio;
pub mod emulator;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::calib::{relative_pressure, relative_rotation, CalibError, CalibrationState, TwoStepCalibrator};
use crate::rotmath::{Quaternion, RotError, Vec3};

pub use csvio::{csv_read, csv_write, CsvRow};
pub use emulator::{synth_session, EmuConfig, NoiseConfig, Session};

/// Steps per recurrent input window.
pub const SEQ_LEN: usize = 6;
pub const FEATURE_DIM: usize = 16;
/// Feature vector plus the time delta to the previous step.
pub const STEP_DIM: usize = FEATURE_DIM + 1;
pub const DEFAULT_PAIR_TOL_MS: f64 = 25.0;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("ordering: {0}")]
    Ordering(String),
    #[error("parse error at line {line}: {msg}")]
    Parse { line: u64, msg: String },
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Calibration(#[from] CalibError),
    #[error(transparent)]
    Rotation(#[from] RotError),
    #[error("invalid config: {0}")]
    Config(String),
}

/// One smartwatch observation: `[θ, α, γ, φ, ρ]` at time `t` (ms).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    pub t: f64,
    /// Rotation vector sensor (global watch orientation).
    pub theta: Quaternion,
    /// Linear acceleration, m/s².
    pub lacc: Vec3,
    /// Gravity, m/s².
    pub grav: Vec3,
    /// Angular velocity, rad/s.
    pub gyro: Vec3,
    /// Pressure, hPa.
    pub pres: f64,
}

impl SensorFrame {
    pub fn values(&self) -> [f64; 14] {
        let q = self.theta.to_array();
        [
            q[0], q[1], q[2], q[3], self.lacc.x, self.lacc.y, self.lacc.z, self.grav.x, self.grav.y,
            self.grav.z, self.gyro.x, self.gyro.y, self.gyro.z, self.pres,
        ]
    }

    pub fn from_values(t: f64, v: &[f64; 14]) -> Self {
        Self {
            t,
            theta: Quaternion::new(v[0], v[1], v[2], v[3]),
            lacc: Vec3::new(v[4], v[5], v[6]),
            grav: Vec3::new(v[7], v[8], v[9]),
            gyro: Vec3::new(v[10], v[11], v[12]),
            pres: v[13],
        }
    }
}

/// One motion-capture observation: hip, lower and upper arm rotations plus
/// the participant's bone lengths.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GroundTruthFrame {
    pub t: f64,
    pub q_h: Quaternion,
    pub q_l: Quaternion,
    pub q_u: Quaternion,
    pub l_l: f64,
    pub l_u: f64,
}

impl GroundTruthFrame {
    pub fn values(&self) -> [f64; 14] {
        let (h, l, u) = (self.q_h.to_array(), self.q_l.to_array(), self.q_u.to_array());
        [
            h[0], h[1], h[2], h[3], l[0], l[1], l[2], l[3], u[0], u[1], u[2], u[3], self.l_l, self.l_u,
        ]
    }

    pub fn from_values(t: f64, v: &[f64; 14]) -> Self {
        Self {
            t,
            q_h: Quaternion::new(v[0], v[1], v[2], v[3]),
            q_l: Quaternion::new(v[4], v[5], v[6], v[7]),
            q_u: Quaternion::new(v[8], v[9], v[10], v[11]),
            l_l: v[12],
            l_u: v[13],
        }
    }

    /// Arm rotations relative to the hip, `(q_u_r, q_l_r)`.
    pub fn relative_rotations(&self) -> Result<(Quaternion, Quaternion), RotError> {
        let (l, u) = crate::calib::relative_arm_rotations(self.q_h, self.q_l, self.q_u)?;
        Ok((u, l))
    }

    /// Ground-truth elbow and wrist positions relative to the shoulder.
    pub fn positions(&self) -> Result<(Vec3, Vec3), RotError> {
        let (u, l) = self.relative_rotations()?;
        crate::rotmath::forward_kinematics(u, l, self.l_u, self.l_l)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PairedSample {
    pub sensor: SensorFrame,
    pub truth: GroundTruthFrame,
    /// |sensor.t - truth.t| in ms.
    pub dt_pair: f64,
}

#[derive(Debug, Clone, Default)]
pub struct MergeOutput {
    pub pairs: Vec<PairedSample>,
    /// Sensor frames with no truth frame within tolerance.
    pub unpaired: usize,
}

/// Pairs every sensor frame with the ground-truth frame closest in time.
/// Ties go to the earlier truth; truth frames may be reused.
pub fn merge_nearest(
    sensors: &[SensorFrame],
    truths: &[GroundTruthFrame],
    tol_ms: f64,
) -> Result<MergeOutput, DataError> {
    check_sorted(sensors.iter().map(|s| s.t), "sensor")?;
    check_sorted(truths.iter().map(|g| g.t), "truth")?;
    let mut out = MergeOutput::default();
    if truths.is_empty() {
        out.unpaired = sensors.len();
        return Ok(out);
    }
    let mut j = 0;
    for s in sensors {
        while j + 1 < truths.len() && truths[j + 1].t <= s.t {
            j += 1;
        }
        let mut best = j;
        if j + 1 < truths.len() && (truths[j + 1].t - s.t).abs() < (truths[j].t - s.t).abs() {
            best = j + 1;
        }
        let dt = (truths[best].t - s.t).abs();
        if dt <= tol_ms {
            out.pairs.push(PairedSample { sensor: *s, truth: truths[best], dt_pair: dt });
        } else {
            out.unpaired += 1;
        }
    }
    Ok(out)
}

fn check_sorted(ts: impl Iterator<Item = f64>, what: &str) -> Result<(), DataError> {
    let mut prev = f64::NEG_INFINITY;
    for (i, t) in ts.enumerate() {
        if !(t >= prev) {
            return Err(DataError::Ordering(format!("{what} stream not sorted at index {i} (t={t})")));
        }
        prev = t;
    }
    Ok(())
}

/// Network input `[ρʳ, θʳ(4), α(3), φ(3), γ(3), l_l, l_u]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FeatureVector(pub [f64; FEATURE_DIM]);

/// Named view of a [`FeatureVector`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FeatureFields {
    pub rel_pres: f64,
    pub rel_theta: Quaternion,
    pub lacc: Vec3,
    pub gyro: Vec3,
    pub grav: Vec3,
    pub l_l: f64,
    pub l_u: f64,
}

impl FeatureVector {
    pub fn pack(f: &FeatureFields) -> Self {
        let q = f.rel_theta.to_array();
        FeatureVector([
            f.rel_pres, q[0], q[1], q[2], q[3], f.lacc.x, f.lacc.y, f.lacc.z, f.gyro.x, f.gyro.y,
            f.gyro.z, f.grav.x, f.grav.y, f.grav.z, f.l_l, f.l_u,
        ])
    }

    pub fn unpack(&self) -> FeatureFields {
        let v = &self.0;
        FeatureFields {
            rel_pres: v[0],
            rel_theta: Quaternion::new(v[1], v[2], v[3], v[4]),
            lacc: Vec3::new(v[5], v[6], v[7]),
            gyro: Vec3::new(v[8], v[9], v[10]),
            grav: Vec3::new(v[11], v[12], v[13]),
            l_l: v[14],
            l_u: v[15],
        }
    }

    pub fn l_l(&self) -> f64 {
        self.0[14]
    }

    pub fn l_u(&self) -> f64 {
        self.0[15]
    }
}

/// Feature vector from a sensor frame and the session's bone lengths.
pub fn features_from_sensor(
    s: &SensorFrame,
    l_l: f64,
    l_u: f64,
    state: &CalibrationState,
) -> Result<FeatureVector, DataError> {
    Ok(FeatureVector::pack(&FeatureFields {
        rel_pres: relative_pressure(s.pres, state),
        rel_theta: relative_rotation(s.theta, state)?,
        lacc: s.lacc,
        gyro: s.gyro,
        grav: s.grav,
        l_l,
        l_u,
    }))
}

pub fn build_features(p: &PairedSample, state: &CalibrationState) -> Result<FeatureVector, DataError> {
    features_from_sensor(&p.sensor, p.truth.l_l, p.truth.l_u, state)
}

/// Six consecutive feature vectors, each with the time delta (s) from the
/// previous step. The first step's delta is zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SequenceSample {
    pub steps: [FeatureVector; SEQ_LEN],
    pub dt: [f64; SEQ_LEN],
}

impl SequenceSample {
    /// Builds a window from time-ordered `(features, t_ms)` pairs.
    pub fn from_window(window: &[(FeatureVector, f64)]) -> Option<Self> {
        if window.len() != SEQ_LEN {
            return None;
        }
        let steps = std::array::from_fn(|k| window[k].0);
        let dt = std::array::from_fn(|k| if k == 0 { 0.0 } else { (window[k].1 - window[k - 1].1) / 1000.0 });
        Some(Self { steps, dt })
    }

    /// Row-major `SEQ_LEN x STEP_DIM` input with `dt` as the last column.
    pub fn flatten(&self) -> [f64; SEQ_LEN * STEP_DIM] {
        let mut out = [0.0; SEQ_LEN * STEP_DIM];
        for (k, (f, dt)) in self.steps.iter().zip(self.dt).enumerate() {
            out[k * STEP_DIM..k * STEP_DIM + FEATURE_DIM].copy_from_slice(&f.0);
            out[k * STEP_DIM + FEATURE_DIM] = dt;
        }
        out
    }

    pub fn last(&self) -> &FeatureVector {
        &self.steps[SEQ_LEN - 1]
    }
}

/// Sliding windows of length six, stride one. Fewer than six frames yields
/// no samples.
pub fn sequence_stack(features: &[(FeatureVector, f64)]) -> Vec<SequenceSample> {
    features.windows(SEQ_LEN).filter_map(SequenceSample::from_window).collect()
}

/// Emulator seed of session `index` in a multi-session dataset.
pub fn session_seed(base: u64, index: u32) -> u64 {
    base.wrapping_add(u64::from(index).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

/// Runs the two-step calibration over a recorded sensor stream.
pub fn calibrate_frames(frames: &[SensorFrame]) -> Result<CalibrationState, CalibError> {
    let mut cal = TwoStepCalibrator::default();
    for s in frames {
        cal.feed(s.t, s.pres, s.theta)?;
        if let Some(state) = cal.state() {
            return Ok(*state);
        }
    }
    Err(CalibError::CalibrationFailed("stream ended before calibration completed".into()))
}

/// One training example: features of a frame, its window (when available),
/// the ground truth and provenance.
#[derive(Debug, Clone)]
pub struct Record {
    pub session: u32,
    pub t: f64,
    pub features: FeatureVector,
    pub truth: GroundTruthFrame,
}

/// Calibrated examples from one or more sessions, in time order per session.
///
/// Only frames that complete a full window are kept, so feedforward and
/// recurrent models see the same targets.
#[derive(Debug, Clone, Default)]
pub struct Corpus {
    pub records: Vec<Record>,
    pub sequences: Vec<SequenceSample>,
}

impl Corpus {
    pub fn len(&self) -> usize {
        self.records.len()
    }

    pub fn is_empty(&self) -> bool {
        self.records.is_empty()
    }

    /// Adds a calibrated session. Frames recorded before calibration finished
    /// are skipped.
    pub fn push_session(
        &mut self,
        session: u32,
        pairs: &[PairedSample],
        state: &CalibrationState,
    ) -> Result<(), DataError> {
        let mut frames = Vec::with_capacity(pairs.len());
        let mut truths = Vec::with_capacity(pairs.len());
        for p in pairs.iter().filter(|p| p.sensor.t >= state.captured_at) {
            frames.push((build_features(p, state)?, p.sensor.t));
            truths.push(p.truth);
        }
        for (k, seq) in sequence_stack(&frames).into_iter().enumerate() {
            let idx = k + SEQ_LEN - 1;
            self.records.push(Record {
                session,
                t: frames[idx].1,
                features: frames[idx].0,
                truth: truths[idx],
            });
            self.sequences.push(seq);
        }
        Ok(())
    }

    pub fn subset(&self, idx: &[usize]) -> Corpus {
        Corpus {
            records: idx.iter().map(|&i| self.records[i].clone()).collect(),
            sequences: idx.iter().map(|&i| self.sequences[i]).collect(),
        }
    }

    /// Adds a recorded paired session, calibrating from its own sensor
    /// stream.
    pub fn push_recording(&mut self, session: u32, pairs: &[PairedSample]) -> Result<CalibrationState, DataError> {
        let sensors: Vec<SensorFrame> = pairs.iter().map(|p| p.sensor).collect();
        let state = calibrate_frames(&sensors)?;
        self.push_session(session, pairs, &state)?;
        Ok(state)
    }

    /// Synthesizes, calibrates and merges `sessions` emulator sessions.
    pub fn synthesize(base: &EmuConfig, sessions: u32) -> Result<Corpus, DataError> {
        let mut corpus = Corpus::default();
        for s in 0..sessions {
            let cfg = EmuConfig {
                seed: session_seed(base.seed, s),
                ..base.clone()
            };
            let session = synth_session(&cfg)?;
            let state = session.calibrate()?;
            let merged = merge_nearest(&session.sensors, &session.truths, DEFAULT_PAIR_TOL_MS)?;
            corpus.push_session(s, &merged.pairs, &state)?;
        }
        Ok(corpus)
    }
}
