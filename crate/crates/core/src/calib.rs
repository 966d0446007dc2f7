//! Two-step calibration (chest-height pressure, then forward-facing rotation)
//! and the rank correlation used to validate it.

use std::cmp::Ordering;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::rotmath::{Quaternion, RotError};

/// Length of each calibration window.
pub const CALIBRATION_WINDOW_MS: f64 = 3000.0;

const PRESSURE_RANGE_HPA: (f64, f64) = (300.0, 1100.0);

#[derive(Debug, Error)]
pub enum CalibError {
    #[error("calibration failed: {0}")]
    CalibrationFailed(String),
    #[error("invalid calibration state: {0}")]
    InvalidState(String),
    #[error("correlation undefined: {0}")]
    UndefinedCorrelation(String),
    #[error(transparent)]
    Rotation(#[from] RotError),
    #[error("calibration file: {0}")]
    Io(#[from] std::io::Error),
    #[error("calibration json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Chest-height pressure and forward-facing watch rotation of one session.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CalibrationState {
    /// hPa
    pub rho_c: f64,
    pub theta_c: Quaternion,
    /// ms
    pub captured_at: f64,
}

impl CalibrationState {
    pub fn new(rho_c: f64, theta_c: Quaternion, captured_at: f64) -> Result<Self, CalibError> {
        let state = Self { rho_c, theta_c, captured_at };
        state.validate()?;
        Ok(state)
    }

    pub fn validate(&self) -> Result<(), CalibError> {
        let (lo, hi) = PRESSURE_RANGE_HPA;
        if !(self.rho_c >= lo && self.rho_c <= hi) {
            return Err(CalibError::InvalidState(format!(
                "chest pressure {} hPa outside [{lo}, {hi}]",
                self.rho_c
            )));
        }
        let n = self.theta_c.norm();
        if !((n - 1.0).abs() <= 1e-9) {
            return Err(CalibError::InvalidState(format!("theta_c norm {n}")));
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String, CalibError> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(s: &str) -> Result<Self, CalibError> {
        let state: CalibrationState = serde_json::from_str(s)?;
        state.validate()?;
        Ok(state)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), CalibError> {
        std::fs::write(path, self.to_json()? + "\n")?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, CalibError> {
        Self::from_json(&std::fs::read_to_string(path)?)
    }
}

pub fn mean_pressure(samples: &[f64]) -> Result<f64, CalibError> {
    if samples.is_empty() {
        return Err(CalibError::CalibrationFailed("empty pressure window".into()));
    }
    Ok(samples.iter().sum::<f64>() / samples.len() as f64)
}

/// `ρʳ = ρ − ρ_c`
pub fn relative_pressure(rho: f64, state: &CalibrationState) -> f64 {
    rho - state.rho_c
}

/// Sign-aligned component-wise mean, renormalized. Samples are flipped onto
/// the hemisphere of the first one so that `q` and `-q` do not cancel.
pub fn mean_rotation(samples: &[Quaternion]) -> Result<Quaternion, CalibError> {
    let first = *samples
        .first()
        .ok_or_else(|| CalibError::CalibrationFailed("empty rotation window".into()))?;
    let mut acc = [0.0; 4];
    for q in samples {
        let q = if q.dot(first) < 0.0 { -*q } else { *q };
        for (a, c) in acc.iter_mut().zip(q.to_array()) {
            *a += c;
        }
    }
    let n = samples.len() as f64;
    Quaternion::new(acc[0] / n, acc[1] / n, acc[2] / n, acc[3] / n)
        .normalize()
        .map_err(|e| CalibError::CalibrationFailed(format!("rotation mean: {e}")))
}

/// `θʳ = θ_c⁻¹ θ`
pub fn relative_rotation(theta: Quaternion, state: &CalibrationState) -> Result<Quaternion, CalibError> {
    Ok((state.theta_c.inverse()? * theta).normalize()?)
}

/// Arm rotations relative to the hip: `(q_h⁻¹ q_l, q_h⁻¹ q_u)`.
pub fn relative_arm_rotations(
    q_h: Quaternion,
    q_l: Quaternion,
    q_u: Quaternion,
) -> Result<(Quaternion, Quaternion), RotError> {
    let inv = q_h.inverse()?;
    Ok(((inv * q_l).normalize()?, (inv * q_u).normalize()?))
}

/// Kendall's tau-b in O(n log n) (Knight's algorithm).
pub fn kendall_tau(xs: &[f64], ys: &[f64]) -> Result<f64, CalibError> {
    if xs.len() != ys.len() {
        return Err(CalibError::UndefinedCorrelation(format!(
            "length mismatch {} vs {}",
            xs.len(),
            ys.len()
        )));
    }
    let n = xs.len();
    if n < 2 {
        return Err(CalibError::UndefinedCorrelation("need at least two samples".into()));
    }
    if xs.iter().chain(ys).any(|v| !v.is_finite()) {
        return Err(CalibError::UndefinedCorrelation("non-finite sample".into()));
    }

    let mut pairs: Vec<(f64, f64)> = xs.iter().copied().zip(ys.iter().copied()).collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.total_cmp(&b.1)));

    let n0 = pair_count(n);
    let mut x_ties = 0u64;
    let mut joint_ties = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && pairs[j].0 == pairs[i].0 {
            j += 1;
        }
        x_ties += pair_count(j - i);
        let mut k = i;
        while k < j {
            let mut m = k + 1;
            while m < j && pairs[m].1 == pairs[k].1 {
                m += 1;
            }
            joint_ties += pair_count(m - k);
            k = m;
        }
        i = j;
    }

    let mut ys_sorted: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    let mut buf = vec![0.0; n];
    let swaps = merge_count(&mut ys_sorted, &mut buf);

    let mut y_ties = 0u64;
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && ys_sorted[j] == ys_sorted[i] {
            j += 1;
        }
        y_ties += pair_count(j - i);
        i = j;
    }

    let denom_x = (n0 - x_ties) as f64;
    let denom_y = (n0 - y_ties) as f64;
    if denom_x == 0.0 || denom_y == 0.0 {
        return Err(CalibError::UndefinedCorrelation("all values tied".into()));
    }
    let numer = n0 as f64 - x_ties as f64 - y_ties as f64 + joint_ties as f64 - 2.0 * swaps as f64;
    Ok((numer / (denom_x * denom_y).sqrt()).clamp(-1.0, 1.0))
}

fn pair_count(k: usize) -> u64 {
    let k = k as u64;
    k * k.saturating_sub(1) / 2
}

/// Stable merge sort returning the number of strict inversions.
fn merge_count(v: &mut [f64], buf: &mut [f64]) -> u64 {
    let n = v.len();
    if n < 2 {
        return 0;
    }
    let mid = n / 2;
    let mut swaps = {
        let (l, r) = v.split_at_mut(mid);
        let (bl, br) = buf.split_at_mut(mid);
        merge_count(l, bl) + merge_count(r, br)
    };
    let (mut i, mut j, mut k) = (0, mid, 0);
    while i < mid && j < n {
        if v[j].total_cmp(&v[i]) == Ordering::Less {
            buf[k] = v[j];
            swaps += (mid - i) as u64;
            j += 1;
        } else {
            buf[k] = v[i];
            i += 1;
        }
        k += 1;
    }
    buf[k..k + (mid - i)].copy_from_slice(&v[i..mid]);
    k += mid - i;
    buf[k..k + (n - j)].copy_from_slice(&v[j..n]);
    v.copy_from_slice(&buf[..n]);
    swaps
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Phase {
    AwaitPressureCal,
    AwaitRotationCal,
    Running,
}

/// Drives the two calibration windows from frame timestamps.
///
/// The first window starts at the first frame seen. Frames with
/// `t < t0 + W` feed the pressure mean, frames in `[t0 + W, t0 + 2W)` feed the
/// rotation mean, and the first frame at or after `t0 + 2W` is a running frame.
#[derive(Debug, Clone)]
pub struct TwoStepCalibrator {
    window_ms: f64,
    start: Option<f64>,
    pressures: Vec<f64>,
    rotations: Vec<Quaternion>,
    rho_c: Option<f64>,
    state: Option<CalibrationState>,
    last_t: f64,
}

impl Default for TwoStepCalibrator {
    fn default() -> Self {
        Self::new(CALIBRATION_WINDOW_MS)
    }
}

impl TwoStepCalibrator {
    pub fn new(window_ms: f64) -> Self {
        Self {
            window_ms,
            start: None,
            pressures: Vec::new(),
            rotations: Vec::new(),
            rho_c: None,
            state: None,
            last_t: f64::NEG_INFINITY,
        }
    }

    pub fn phase(&self) -> Phase {
        match (self.rho_c, self.state) {
            (_, Some(_)) => Phase::Running,
            (Some(_), None) => Phase::AwaitRotationCal,
            (None, None) => Phase::AwaitPressureCal,
        }
    }

    pub fn state(&self) -> Option<&CalibrationState> {
        self.state.as_ref()
    }

    /// Feeds one observation and returns the phase it belongs to.
    pub fn feed(&mut self, t: f64, pressure: f64, theta: Quaternion) -> Result<Phase, CalibError> {
        if self.state.is_some() {
            return Ok(Phase::Running);
        }
        let t0 = *self.start.get_or_insert(t);
        if t < self.last_t {
            return Err(CalibError::CalibrationFailed(format!(
                "timestamps went backwards ({t} after {})",
                self.last_t
            )));
        }
        self.last_t = t;

        if self.rho_c.is_none() {
            if t < t0 + self.window_ms {
                self.pressures.push(pressure);
                return Ok(Phase::AwaitPressureCal);
            }
            let rho_c = mean_pressure(&self.pressures)?;
            log::info!(
                "pressure calibration done: rho_c = {rho_c:.4} hPa from {} samples",
                self.pressures.len()
            );
            self.rho_c = Some(rho_c);
        }

        if t < t0 + 2.0 * self.window_ms {
            self.rotations.push(theta);
            return Ok(Phase::AwaitRotationCal);
        }
        let theta_c = mean_rotation(&self.rotations)?;
        let rho_c = self.rho_c.expect("pressure calibrated above");
        let state = CalibrationState::new(rho_c, theta_c, t)?;
        log::info!(
            "rotation calibration done: theta_c = {theta_c} from {} samples",
            self.rotations.len()
        );
        self.state = Some(state);
        Ok(Phase::Running)
    }
}
