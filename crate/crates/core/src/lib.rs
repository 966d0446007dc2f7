//! Arm pose estimation from a single smartwatch.
//!
//! The crate covers the whole pipeline: two-step sensor calibration,
//! continuous rotation targets, small feedforward/recurrent estimators with
//! Monte-Carlo dropout, distributional inference with mode detection, a
//! cross-validated benchmark harness and a real-time UDP server. A kinematic
//! emulator stands in for the watch and the motion-capture rig.

pub mod rotmath;
pub mod calib;
pub mod dataset;
pub mod nn;
pub mod estimate;
pub mod stream;
pub mod eval;
