//! Kinematic smartwatch + motion-capture emulator.
//!
//! Arm motion is a chain of random reachable keyframes joined by slerp with a
//! quintic ease, so positions are C2 between keyframes. Sensor channels are
//! derived from that trajectory by finite differences; ground truth is
//! sampled from it directly.
//!
//! With the calibration prelude enabled, a session starts with the watch at
//! chest height for three seconds, then the arm stretched forward for three
//! seconds, then free motion.

use std::f64::consts::FRAC_PI_2;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use super::{DataError, GroundTruthFrame, SensorFrame};
use crate::calib::{CalibError, CalibrationState, CALIBRATION_WINDOW_MS};
use crate::rotmath::{forward_kinematics, Quaternion, Vec3};

pub const GRAVITY: f64 = 9.80665;

/// Step used for trajectory derivatives, seconds.
const DIFF_STEP_S: f64 = 0.002;

const Y_AXIS: Vec3 = Vec3::new(0.0, 1.0, 0.0);
const X_AXIS: Vec3 = Vec3::new(1.0, 0.0, 0.0);
const Z_AXIS: Vec3 = Vec3::new(0.0, 0.0, 1.0);

/// Per-channel Gaussian noise standard deviations.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseConfig {
    /// Rotation-vector sensor, rad (applied as a random small rotation).
    pub theta: f64,
    /// m/s²
    pub lacc: f64,
    /// m/s²
    pub grav: f64,
    /// rad/s
    pub gyro: f64,
    /// hPa
    pub pres: f64,
}

impl Default for NoiseConfig {
    fn default() -> Self {
        Self { theta: 0.01, lacc: 0.05, grav: 0.02, gyro: 0.01, pres: 0.01 }
    }
}

impl NoiseConfig {
    pub fn zero() -> Self {
        Self { theta: 0.0, lacc: 0.0, grav: 0.0, gyro: 0.0, pres: 0.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EmuConfig {
    pub seed: u64,
    pub sensor_rate_hz: f64,
    pub truth_rate_hz: f64,
    /// Total session length including the calibration prelude.
    pub duration_s: f64,
    pub calibration_prelude: bool,
    pub noise: NoiseConfig,
    /// Session pressure offset from `base_pressure_hpa`; drawn uniformly in
    /// ±15 hPa when absent.
    pub pressure_offset_hpa: Option<f64>,
    pub base_pressure_hpa: f64,
    /// Pressure change per meter of wrist elevation.
    pub pressure_gradient_hpa_per_m: f64,
    pub upper_arm_m: Option<f64>,
    pub lower_arm_m: Option<f64>,
    /// Facing direction of the participant; uniform when absent.
    pub hip_yaw_deg: Option<f64>,
    /// Watch frame relative to the lower-arm frame.
    pub mount: Quaternion,
    /// Range of time between random motion keyframes, seconds.
    pub keyframe_interval_s: (f64, f64),
}

impl Default for EmuConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sensor_rate_hz: 50.0,
            truth_rate_hz: 120.0,
            duration_s: 60.0,
            calibration_prelude: true,
            noise: NoiseConfig::default(),
            pressure_offset_hpa: None,
            base_pressure_hpa: 1013.25,
            pressure_gradient_hpa_per_m: -0.12,
            upper_arm_m: None,
            lower_arm_m: None,
            hip_yaw_deg: None,
            mount: Quaternion::IDENTITY,
            keyframe_interval_s: (0.8, 2.0),
        }
    }
}

impl EmuConfig {
    pub fn validate(&self) -> Result<(), DataError> {
        let bad = |m: &str| Err(DataError::Config(m.to_string()));
        if !(self.sensor_rate_hz > 0.0) || !(self.truth_rate_hz > 0.0) {
            return bad("rates must be positive");
        }
        if !(self.duration_s > 0.0) {
            return bad("duration must be positive");
        }
        if self.calibration_prelude && self.duration_s * 1000.0 <= 2.0 * CALIBRATION_WINDOW_MS {
            return bad("duration must exceed the two calibration windows");
        }
        let n = &self.noise;
        if [n.theta, n.lacc, n.grav, n.gyro, n.pres].iter().any(|s| !(*s >= 0.0)) {
            return bad("noise sigmas must be non-negative");
        }
        let (lo, hi) = self.keyframe_interval_s;
        if !(lo > 0.0 && hi >= lo) {
            return bad("keyframe interval range invalid");
        }
        for l in [self.upper_arm_m, self.lower_arm_m].into_iter().flatten() {
            if !(l > 0.1 && l < 0.6) {
                return bad("bone lengths must lie in (0.1, 0.6) m");
            }
        }
        if (self.mount.norm() - 1.0).abs() > 1e-6 {
            return bad("mount must be a unit quaternion");
        }
        Ok(())
    }
}

/// An emulated recording: both streams plus the hidden session parameters.
#[derive(Debug, Clone)]
pub struct Session {
    pub sensors: Vec<SensorFrame>,
    pub truths: Vec<GroundTruthFrame>,
    pub pressure_offset_hpa: f64,
    pub hip: Quaternion,
    pub upper_arm_m: f64,
    pub lower_arm_m: f64,
    pub(crate) trajectory: Trajectory,
    pub(crate) mount: Quaternion,
}

impl Session {
    /// Runs the two-step calibration over the sensor stream.
    pub fn calibrate(&self) -> Result<CalibrationState, CalibError> {
        super::calibrate_frames(&self.sensors)
    }

    /// Noise-free watch orientation at `t_ms`.
    pub fn true_watch_rotation(&self, t_ms: f64) -> Quaternion {
        let (_, lower) = self.trajectory.eval(t_ms / 1000.0);
        self.hip * lower * self.mount
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Keyframe {
    t: f64,
    upper: Quaternion,
    lower: Quaternion,
}

/// Arm rotations relative to the hip as a function of time.
#[derive(Debug, Clone)]
pub(crate) struct Trajectory {
    keys: Vec<Keyframe>,
    end: f64,
}

impl Trajectory {
    fn eval(&self, t: f64) -> (Quaternion, Quaternion) {
        let t = t.clamp(0.0, self.end);
        let i = self.keys.partition_point(|k| k.t <= t).saturating_sub(1);
        if i + 1 >= self.keys.len() {
            let k = &self.keys[self.keys.len() - 1];
            return (k.upper, k.lower);
        }
        let (a, b) = (&self.keys[i], &self.keys[i + 1]);
        let u = ((t - a.t) / (b.t - a.t)).clamp(0.0, 1.0);
        let s = u * u * u * (u * (u * 6.0 - 15.0) + 10.0);
        (slerp(a.upper, b.upper, s), slerp(a.lower, b.lower, s))
    }
}

fn slerp(a: Quaternion, b: Quaternion, s: f64) -> Quaternion {
    if a == b {
        return a;
    }
    let mut d = a.dot(b);
    let b = if d < 0.0 {
        d = -d;
        -b
    } else {
        b
    };
    if d > 0.9995 {
        let q = Quaternion::new(
            a.w + (b.w - a.w) * s,
            a.x + (b.x - a.x) * s,
            a.y + (b.y - a.y) * s,
            a.z + (b.z - a.z) * s,
        );
        return q.normalize().unwrap_or(a);
    }
    let theta = d.acos();
    let sin = theta.sin();
    let wa = ((1.0 - s) * theta).sin() / sin;
    let wb = (s * theta).sin() / sin;
    Quaternion::new(
        wa * a.w + wb * b.w,
        wa * a.x + wb * b.x,
        wa * a.y + wb * b.y,
        wa * a.z + wb * b.z,
    )
}

fn rot(axis: Vec3, deg: f64) -> Quaternion {
    Quaternion::from_axis_angle(axis, deg.to_radians())
}

/// Upper arm: yaw about Y, pitch about Z, twist about the bone. Lower arm:
/// elbow flexion about the local Y axis, then forearm pronation.
fn arm_pose(yaw: f64, pitch: f64, twist: f64, flex: f64, pron: f64) -> (Quaternion, Quaternion) {
    let upper = rot(Y_AXIS, yaw) * rot(Z_AXIS, pitch) * rot(X_AXIS, twist);
    let lower = upper * rot(Y_AXIS, flex) * rot(X_AXIS, pron);
    (upper, lower)
}

fn random_pose(rng: &mut impl Rng) -> (Quaternion, Quaternion) {
    arm_pose(
        rng.random_range(-30.0..120.0),
        rng.random_range(-80.0..85.0),
        rng.random_range(-60.0..60.0),
        rng.random_range(0.0..140.0),
        rng.random_range(-80.0..80.0),
    )
}

/// Watch held in front of the chest.
pub fn chest_pose() -> (Quaternion, Quaternion) {
    arm_pose(60.0, 65.0, 0.0, 100.0, 0.0)
}

/// Arm stretched straight forward.
pub fn forward_pose() -> (Quaternion, Quaternion) {
    let q = Quaternion::from_axis_angle(Y_AXIS, FRAC_PI_2);
    (q, q)
}

fn build_trajectory(cfg: &EmuConfig, rng: &mut impl Rng) -> Trajectory {
    let end = cfg.duration_s;
    let mut keys = Vec::new();
    let push = |keys: &mut Vec<Keyframe>, t: f64, (upper, lower): (Quaternion, Quaternion)| {
        keys.push(Keyframe { t, upper, lower });
    };
    let mut t = 0.0;
    if cfg.calibration_prelude {
        let w = CALIBRATION_WINDOW_MS / 1000.0;
        push(&mut keys, 0.0, chest_pose());
        push(&mut keys, w - 0.5, chest_pose());
        push(&mut keys, w, forward_pose());
        push(&mut keys, 2.0 * w, forward_pose());
        t = 2.0 * w;
    } else {
        push(&mut keys, 0.0, random_pose(rng));
    }
    let (lo, hi) = cfg.keyframe_interval_s;
    while t < end {
        t += if hi > lo { rng.random_range(lo..hi) } else { lo };
        push(&mut keys, t, random_pose(rng));
    }
    Trajectory { keys, end }
}

fn gaussian(rng: &mut impl Rng, sigma: f64) -> f64 {
    if sigma == 0.0 {
        return 0.0;
    }
    Normal::new(0.0, sigma).expect("sigma validated").sample(rng)
}

fn gaussian_vec(rng: &mut impl Rng, sigma: f64) -> Vec3 {
    Vec3::new(gaussian(rng, sigma), gaussian(rng, sigma), gaussian(rng, sigma))
}

/// Generates one emulated session from `cfg`.
pub fn synth_session(cfg: &EmuConfig) -> Result<Session, DataError> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let offset = cfg.pressure_offset_hpa.unwrap_or_else(|| rng.random_range(-15.0..15.0));
    let l_u = cfg.upper_arm_m.unwrap_or_else(|| rng.random_range(0.26..0.34));
    let l_l = cfg.lower_arm_m.unwrap_or_else(|| rng.random_range(0.22..0.30));
    let yaw = cfg.hip_yaw_deg.unwrap_or_else(|| rng.random_range(-180.0..180.0));
    let hip = rot(Y_AXIS, yaw);
    let trajectory = build_trajectory(cfg, &mut rng);
    let end = cfg.duration_s;

    let watch = |t: f64| hip * trajectory.eval(t).1 * cfg.mount;
    let wrist = |t: f64| {
        let (u, l) = trajectory.eval(t);
        forward_kinematics(hip * u, hip * l, l_u, l_l).map(|(_, w)| w)
    };
    let h = DIFF_STEP_S;

    let n_sensor = (end * cfg.sensor_rate_hz).ceil() as usize;
    let mut sensors = Vec::with_capacity(n_sensor);
    for k in 0..n_sensor {
        let t = k as f64 / cfg.sensor_rate_hz;
        if t >= end {
            break;
        }
        let q = watch(t);
        let q_inv = q.conjugate();
        let (acc_world, omega) = if t - h >= 0.0 && t + h <= end {
            let acc = (wrist(t + h)? - wrist(t)? * 2.0 + wrist(t - h)?) / (h * h);
            let om = (watch(t - h).conjugate() * watch(t + h)).to_rotation_vector() / (2.0 * h);
            (acc, om)
        } else if t - h < 0.0 {
            let acc = (wrist(t + 2.0 * h)? - wrist(t + h)? * 2.0 + wrist(t)?) / (h * h);
            let om = (q_inv * watch(t + h)).to_rotation_vector() / h;
            (acc, om)
        } else {
            let acc = (wrist(t)? - wrist(t - h)? * 2.0 + wrist(t - 2.0 * h)?) / (h * h);
            let om = (watch(t - h).conjugate() * q).to_rotation_vector() / h;
            (acc, om)
        };
        let grav = q_inv.rotate(Vec3::new(0.0, GRAVITY, 0.0));
        let lacc = q_inv.rotate(acc_world);
        let pres = cfg.base_pressure_hpa + offset + cfg.pressure_gradient_hpa_per_m * wrist(t)?.y;

        let n = &cfg.noise;
        let theta = if n.theta > 0.0 {
            (q * Quaternion::from_rotation_vector(gaussian_vec(&mut rng, n.theta))).normalize()?
        } else {
            q
        };
        sensors.push(SensorFrame {
            t: t * 1000.0,
            theta,
            lacc: lacc + gaussian_vec(&mut rng, n.lacc),
            grav: grav + gaussian_vec(&mut rng, n.grav),
            gyro: omega + gaussian_vec(&mut rng, n.gyro),
            pres: pres + gaussian(&mut rng, n.pres),
        });
    }

    let n_truth = (end * cfg.truth_rate_hz).ceil() as usize;
    let mut truths = Vec::with_capacity(n_truth);
    for k in 0..n_truth {
        let t = k as f64 / cfg.truth_rate_hz;
        if t >= end {
            break;
        }
        let (u, l) = trajectory.eval(t);
        truths.push(GroundTruthFrame { t: t * 1000.0, q_h: hip, q_l: hip * l, q_u: hip * u, l_l, l_u });
    }

    Ok(Session {
        sensors,
        truths,
        pressure_offset_hpa: offset,
        hip,
        upper_arm_m: l_u,
        lower_arm_m: l_l,
        trajectory,
        mount: cfg.mount,
    })
}
