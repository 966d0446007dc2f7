//! Monte-Carlo dropout inference: sample clouds, their spread, and
//! detection of bimodal clouds.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::nn::{ModelInput, NnError, TrainedModel};
use crate::rotmath::{Quaternion, Vec3};

pub const DEFAULT_WCSS_RATIO: f64 = 4.0;
pub const DEFAULT_MIN_SEPARATION_M: f64 = 0.10;
const KMEANS_ITERS: usize = 20;

#[derive(Debug, Error)]
pub enum EstimateError {
    #[error("dropout rate is zero, Monte-Carlo sampling has no stochasticity")]
    NoStochasticity,
    #[error("need at least 2 samples, got {0}")]
    TooFewSamples(usize),
    #[error("no modes to select from")]
    NoModes,
    #[error(transparent)]
    Model(#[from] NnError),
}

/// Shoulder-relative elbow and wrist positions in meters, plus the arm
/// rotations when the codec predicts them.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArmPose {
    pub p_e: Vec3,
    pub p_w: Vec3,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_u_r: Option<Quaternion>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_l_r: Option<Quaternion>,
}

impl ArmPose {
    pub fn from_positions(p_e: Vec3, p_w: Vec3) -> Self {
        ArmPose { p_e, p_w, q_u_r: None, q_l_r: None }
    }

    /// `(p_e, p_w)` concatenated.
    pub fn coords(&self) -> [f64; 6] {
        [self.p_e.x, self.p_e.y, self.p_e.z, self.p_w.x, self.p_w.y, self.p_w.z]
    }

    pub fn from_coords(c: [f64; 6]) -> Self {
        Self::from_positions(Vec3::new(c[0], c[1], c[2]), Vec3::new(c[3], c[4], c[5]))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mode {
    pub centroid: ArmPose,
    pub weight: f64,
    pub size: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PoseDistribution {
    pub samples: Vec<ArmPose>,
    pub mean: ArmPose,
    pub std_e: Vec3,
    pub std_w: Vec3,
    pub modes: Vec<Mode>,
}

#[derive(Serialize)]
struct Summary<'a> {
    mean: &'a ArmPose,
    std_e: Vec3,
    std_w: Vec3,
    modes: &'a [Mode],
    #[serde(skip_serializing_if = "Option::is_none")]
    samples: Option<&'a [ArmPose]>,
}

impl PoseDistribution {
    /// Compact JSON with mean, spread and modes; samples only on request.
    pub fn to_json_value(&self, with_samples: bool) -> serde_json::Value {
        let s = Summary {
            mean: &self.mean,
            std_e: self.std_e,
            std_w: self.std_w,
            modes: &self.modes,
            samples: with_samples.then_some(&self.samples[..]),
        };
        serde_json::to_value(s).expect("pose summary serializes")
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModeConfig {
    /// Minimum WCSS(k=1) / WCSS(k=2) for a two-mode verdict.
    pub wcss_ratio: f64,
    /// Minimum distance between the two centroids in (p_e, p_w) space.
    pub min_separation: f64,
}

impl Default for ModeConfig {
    fn default() -> Self {
        ModeConfig { wcss_ratio: DEFAULT_WCSS_RATIO, min_separation: DEFAULT_MIN_SEPARATION_M }
    }
}

/// Per-axis mean and unbiased standard deviation of elbow and wrist
/// positions. Returns `(mean, std_e, std_w)`.
pub fn distribution_stats(samples: &[ArmPose]) -> Result<(ArmPose, Vec3, Vec3), EstimateError> {
    let n = samples.len();
    if n < 2 {
        return Err(EstimateError::TooFewSamples(n));
    }
    let mut mean = [0.0; 6];
    for s in samples {
        for (m, c) in mean.iter_mut().zip(s.coords()) {
            *m += c;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as f64);
    let mut var = [0.0; 6];
    for s in samples {
        for ((v, c), m) in var.iter_mut().zip(s.coords()).zip(mean) {
            *v += (c - m) * (c - m);
        }
    }
    let sd: Vec<f64> = var.iter().map(|v| (v / (n - 1) as f64).sqrt()).collect();
    Ok((ArmPose::from_coords(mean), Vec3::new(sd[0], sd[1], sd[2]), Vec3::new(sd[3], sd[4], sd[5])))
}

fn dist2(a: &[f64; 6], b: &[f64; 6]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

fn centroid(points: &[[f64; 6]], members: impl Iterator<Item = usize>) -> Option<([f64; 6], usize)> {
    let mut c = [0.0; 6];
    let mut n = 0;
    for i in members {
        for (a, b) in c.iter_mut().zip(&points[i]) {
            *a += b;
        }
        n += 1;
    }
    (n > 0).then(|| (c.map(|v| v / n as f64), n))
}

/// One or two modes of a sample cloud, heaviest first.
///
/// Points are sorted before clustering, so the verdict does not depend on
/// input order. k = 2 is seeded with the farthest pair and refined by Lloyd
/// iterations.
pub fn detect_modes(samples: &[ArmPose], cfg: &ModeConfig) -> Vec<Mode> {
    let mut pts: Vec<[f64; 6]> = samples.iter().map(ArmPose::coords).collect();
    pts.sort_by(|a, b| a.iter().zip(b).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal));
    let n = pts.len();
    let Some((mut mean, _)) = centroid(&pts, 0..n) else {
        return Vec::new();
    };
    if pts[0] == pts[n - 1] {
        mean = pts[0];
    }
    let single = vec![Mode { centroid: ArmPose::from_coords(mean), weight: 1.0, size: n }];
    let wcss1: f64 = pts.iter().map(|p| dist2(p, &mean)).sum();
    if n < 2 || wcss1 <= 0.0 || pts[0] == pts[n - 1] {
        return single;
    }

    let (mut ia, mut ib, mut best) = (0, 0, -1.0);
    for i in 0..n {
        for j in i + 1..n {
            let d = dist2(&pts[i], &pts[j]);
            if d > best {
                (ia, ib, best) = (i, j, d);
            }
        }
    }
    let mut cents = [pts[ia], pts[ib]];
    let mut assign = vec![usize::MAX; n];
    for _ in 0..KMEANS_ITERS {
        let mut changed = false;
        for (p, a) in pts.iter().zip(assign.iter_mut()) {
            let k = usize::from(dist2(p, &cents[1]) < dist2(p, &cents[0]));
            changed |= *a != k;
            *a = k;
        }
        for (k, c) in cents.iter_mut().enumerate() {
            if let Some((m, _)) = centroid(&pts, (0..n).filter(|&i| assign[i] == k)) {
                *c = m;
            }
        }
        if !changed {
            break;
        }
    }
    let wcss2: f64 = pts.iter().zip(&assign).map(|(p, &k)| dist2(p, &cents[k])).sum();
    let sizes = [assign.iter().filter(|&&k| k == 0).count(), assign.iter().filter(|&&k| k == 1).count()];
    let ratio = if wcss2 > 0.0 { wcss1 / wcss2 } else { f64::INFINITY };
    let sep = dist2(&cents[0], &cents[1]).sqrt();
    if sizes.contains(&0) || ratio < cfg.wcss_ratio || sep < cfg.min_separation {
        return single;
    }
    let mut modes: Vec<(Mode, [f64; 6])> = (0..2)
        .map(|k| {
            (Mode { centroid: ArmPose::from_coords(cents[k]), weight: sizes[k] as f64 / n as f64, size: sizes[k] }, cents[k])
        })
        .collect();
    modes.sort_by(|a, b| {
        b.0.size.cmp(&a.0.size).then_with(|| {
            a.1.iter().zip(&b.1).map(|(x, y)| x.total_cmp(y)).find(|o| o.is_ne()).unwrap_or(std::cmp::Ordering::Equal)
        })
    });
    modes.into_iter().map(|(m, _)| m).collect()
}

/// Weights of the mode-selection cost.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CostWeights {
    pub wrist: f64,
    pub elbow: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        CostWeights { wrist: 1.0, elbow: 0.0 }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct SelectContext {
    pub previous: Option<ArmPose>,
    pub weights: CostWeights,
}

/// Centroid of the cheapest mode. Without a previous pose the heaviest mode
/// wins. Ties go to the heavier mode, then the lower index.
pub fn select_mode(modes: &[Mode], ctx: &SelectContext) -> Result<ArmPose, EstimateError> {
    let cost = |m: &Mode| match ctx.previous {
        Some(p) => {
            ctx.weights.wrist * m.centroid.p_w.distance(p.p_w) + ctx.weights.elbow * m.centroid.p_e.distance(p.p_e)
        }
        None => 0.0,
    };
    let mut best: Option<(usize, f64)> = None;
    for (i, m) in modes.iter().enumerate() {
        let c = cost(m);
        let better = match best {
            None => true,
            Some((j, bc)) => c < bc || (c == bc && m.weight > modes[j].weight),
        };
        if better {
            best = Some((i, c));
        }
    }
    best.map(|(i, _)| modes[i].centroid).ok_or(EstimateError::NoModes)
}

/// `n_passes` dropout-on predictions of one input, decoded and summarized.
pub fn mc_predict(
    model: &TrainedModel,
    input: &ModelInput,
    n_passes: usize,
    seed: u64,
) -> Result<PoseDistribution, EstimateError> {
    mc_predict_with(model, input, n_passes, seed, &ModeConfig::default())
}

pub fn mc_predict_with(
    model: &TrainedModel,
    input: &ModelInput,
    n_passes: usize,
    seed: u64,
    modes: &ModeConfig,
) -> Result<PoseDistribution, EstimateError> {
    if model.spec().dropout <= 0.0 {
        return Err(EstimateError::NoStochasticity);
    }
    if n_passes < 2 {
        return Err(EstimateError::TooFewSamples(n_passes));
    }
    let codec = model.spec().codec;
    let (l_u, l_l) = input.arm_lengths();
    let samples = model
        .mc_raw(input, n_passes, seed)?
        .iter()
        .map(|raw| crate::nn::decode_prediction(raw, l_u, l_l, codec))
        .collect::<Result<Vec<_>, _>>()?;
    let (mean, std_e, std_w) = distribution_stats(&samples)?;
    let modes = detect_modes(&samples, modes);
    Ok(PoseDistribution { samples, mean, std_e, std_w, modes })
}
