//! Regression targets. Positions are shoulder-relative; rotations are the
//! calibrated arm rotations.

use serde::{Deserialize, Serialize};

use super::NnError;
use crate::dataset::GroundTruthFrame;
use crate::estimate::ArmPose;
use crate::rotmath::{
    forward_kinematics, matrix_to_quat, polar_decode, polar_encode, sixd_decode, sixd_encode, PolarDir, Quaternion,
    RotError, SixD, Vec3,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TargetCodec {
    /// Elbow direction and elbow-to-wrist direction as (azimuth, elevation).
    Polar,
    /// Elbow and wrist positions.
    Xyz,
    /// Upper then lower arm rotation, first two matrix columns each.
    SixD,
    /// Upper then lower arm quaternion, scalar first.
    Quat,
}

impl TargetCodec {
    pub const ALL: [TargetCodec; 4] = [TargetCodec::Polar, TargetCodec::Xyz, TargetCodec::SixD, TargetCodec::Quat];

    pub fn dims(self) -> usize {
        match self {
            TargetCodec::Polar => 4,
            TargetCodec::Xyz => 6,
            TargetCodec::SixD => 12,
            TargetCodec::Quat => 8,
        }
    }

    /// Whether every decoded pose respects the bone lengths.
    pub fn is_constrained(self) -> bool {
        self != TargetCodec::Xyz
    }

    pub fn name(self) -> &'static str {
        match self {
            TargetCodec::Polar => "polar",
            TargetCodec::Xyz => "xyz",
            TargetCodec::SixD => "sixd",
            TargetCodec::Quat => "quat",
        }
    }
}

impl std::str::FromStr for TargetCodec {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        TargetCodec::ALL
            .into_iter()
            .find(|c| c.name().eq_ignore_ascii_case(s))
            .ok_or_else(|| format!("unknown codec '{s}' (expected polar, xyz, sixd or quat)"))
    }
}

pub fn encode_target(g: &GroundTruthFrame, codec: TargetCodec) -> Result<Vec<f64>, NnError> {
    let (q_u, q_l) = g.relative_rotations()?;
    let (p_e, p_w) = g.positions()?;
    Ok(match codec {
        TargetCodec::Xyz => [p_e.to_array(), p_w.to_array()].concat(),
        TargetCodec::Polar => {
            let e = polar_encode(p_e)?;
            let w = polar_encode(p_w - p_e)?;
            vec![e.azimuth, e.elevation, w.azimuth, w.elevation]
        }
        TargetCodec::SixD => [sixd_encode(&q_u.to_matrix()).0, sixd_encode(&q_l.to_matrix()).0].concat(),
        TargetCodec::Quat => [q_u.canonical().to_array(), q_l.canonical().to_array()].concat(),
    })
}

pub fn decode_prediction(raw: &[f64], l_u: f64, l_l: f64, codec: TargetCodec) -> Result<ArmPose, NnError> {
    if raw.len() != codec.dims() {
        return Err(NnError::Shape(format!("{} raw values for {} codec", raw.len(), codec.name())));
    }
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(NnError::Decode(RotError::InvalidRotation("non-finite network output".into())));
    }
    match codec {
        TargetCodec::Xyz => Ok(ArmPose {
            p_e: Vec3::new(raw[0], raw[1], raw[2]),
            p_w: Vec3::new(raw[3], raw[4], raw[5]),
            q_u_r: None,
            q_l_r: None,
        }),
        TargetCodec::Polar => {
            let p_e = polar_decode(PolarDir { azimuth: raw[0], elevation: raw[1] }) * l_u;
            let p_w = p_e + polar_decode(PolarDir { azimuth: raw[2], elevation: raw[3] }) * l_l;
            Ok(ArmPose { p_e, p_w, q_u_r: None, q_l_r: None })
        }
        TargetCodec::SixD => {
            let block = |k: usize| SixD(std::array::from_fn(|i| raw[6 * k + i]));
            let q_u = matrix_to_quat(&sixd_decode(&block(0))?)?;
            let q_l = matrix_to_quat(&sixd_decode(&block(1))?)?;
            from_rotations(q_u, q_l, l_u, l_l)
        }
        TargetCodec::Quat => {
            let q_u = Quaternion::new(raw[0], raw[1], raw[2], raw[3]).normalize()?;
            let q_l = Quaternion::new(raw[4], raw[5], raw[6], raw[7]).normalize()?;
            from_rotations(q_u, q_l, l_u, l_l)
        }
    }
}

fn from_rotations(q_u: Quaternion, q_l: Quaternion, l_u: f64, l_l: f64) -> Result<ArmPose, NnError> {
    let (p_e, p_w) = forward_kinematics(q_u, q_l, l_u, l_l)?;
    Ok(ArmPose { p_e, p_w, q_u_r: Some(q_u), q_l_r: Some(q_l) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rotmath::random_rotation;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_truth(rng: &mut impl Rng) -> GroundTruthFrame {
        GroundTruthFrame {
            t: 0.0,
            q_h: random_rotation(rng),
            q_l: random_rotation(rng),
            q_u: random_rotation(rng),
            l_l: rng.random_range(0.2..0.32),
            l_u: rng.random_range(0.24..0.36),
        }
    }

    #[test]
    fn identity_pose_through_every_codec() {
        let g = GroundTruthFrame {
            t: 0.0,
            q_h: Quaternion::IDENTITY,
            q_l: Quaternion::IDENTITY,
            q_u: Quaternion::IDENTITY,
            l_l: 0.25,
            l_u: 0.3,
        };
        for codec in TargetCodec::ALL {
            let raw = encode_target(&g, codec).unwrap();
            assert_eq!(raw.len(), codec.dims());
            let pose = decode_prediction(&raw, g.l_u, g.l_l, codec).unwrap();
            assert!(pose.p_e.distance(Vec3::new(-0.3, 0.0, 0.0)) < 1e-12, "{codec:?}");
            assert!(pose.p_w.distance(Vec3::new(-0.55, 0.0, 0.0)) < 1e-12, "{codec:?}");
        }
    }

    #[test]
    fn round_trip_reproduces_positions() {
        let mut rng = ChaCha8Rng::seed_from_u64(41);
        for _ in 0..2000 {
            let g = random_truth(&mut rng);
            let (p_e, p_w) = g.positions().unwrap();
            for codec in TargetCodec::ALL {
                let pose = decode_prediction(&encode_target(&g, codec).unwrap(), g.l_u, g.l_l, codec).unwrap();
                assert!(pose.p_e.distance(p_e) < 1e-6, "{codec:?}");
                assert!(pose.p_w.distance(p_w) < 1e-6, "{codec:?}");
            }
        }
    }

    #[test]
    fn quaternion_scale_is_ignored() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let g = random_truth(&mut rng);
        let raw = encode_target(&g, TargetCodec::Quat).unwrap();
        let doubled: Vec<f64> = raw.iter().map(|v| 2.0 * v).collect();
        let a = decode_prediction(&raw, 0.3, 0.25, TargetCodec::Quat).unwrap();
        let b = decode_prediction(&doubled, 0.3, 0.25, TargetCodec::Quat).unwrap();
        assert!(a.p_e.distance(b.p_e) < 1e-15 && a.p_w.distance(b.p_w) < 1e-15);
    }

    #[test]
    fn constrained_codecs_stay_on_the_arm_manifold() {
        let mut rng = ChaCha8Rng::seed_from_u64(43);
        let mut xyz_violations = 0;
        for _ in 0..10_000 {
            let l_u = rng.random_range(0.2..0.4);
            let l_l = rng.random_range(0.2..0.4);
            for codec in TargetCodec::ALL {
                let raw: Vec<f64> = (0..codec.dims()).map(|_| rng.random_range(-3.0..3.0)).collect();
                let pose = decode_prediction(&raw, l_u, l_l, codec).unwrap();
                let e = (pose.p_e.norm() - l_u).abs().max((pose.p_w.distance(pose.p_e) - l_l).abs());
                if codec.is_constrained() {
                    assert!(e < 1e-9, "{codec:?}: {e}");
                } else if e > 1e-3 {
                    xyz_violations += 1;
                }
            }
        }
        assert!(xyz_violations > 9_900);
    }

    #[test]
    fn degenerate_raw_outputs_are_errors() {
        let zero_q = [0.0; 8];
        assert!(decode_prediction(&zero_q, 0.3, 0.25, TargetCodec::Quat).is_err());
        let mut six = [0.0; 12];
        six[0] = 1.0;
        six[3] = 2.0;
        assert!(decode_prediction(&six, 0.3, 0.25, TargetCodec::SixD).is_err());
        assert!(decode_prediction(&[f64::NAN; 6], 0.3, 0.25, TargetCodec::Xyz).is_err());
        assert!(matches!(decode_prediction(&[0.0; 5], 0.3, 0.25, TargetCodec::Xyz), Err(NnError::Shape(_))));
    }

    #[test]
    fn names_parse() {
        for c in TargetCodec::ALL {
            assert_eq!(c.name().parse::<TargetCodec>().unwrap(), c);
        }
        assert_eq!("SixD".parse::<TargetCodec>().unwrap(), TargetCodec::SixD);
        assert!("euler".parse::<TargetCodec>().is_err());
    }
}
