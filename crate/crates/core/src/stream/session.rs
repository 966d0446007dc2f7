use std::collections::VecDeque;

use super::wire::SensorPacket;
use super::StreamError;
use crate::calib::{Phase, TwoStepCalibrator};
use crate::dataset::{features_from_sensor, FeatureVector, SequenceSample, SEQ_LEN};
use crate::nn::{Arch, ModelInput};

/// A frame ready for inference.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Job {
    pub seq: u32,
    pub t: f64,
    pub input: ModelInput,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Ingest {
    Duplicate,
    OutOfOrder,
    Calibrating(Phase),
    /// Running, but the window is not full yet.
    Warmup,
    Ready(Job),
}

/// Calibration phase machine plus the last six feature vectors of one
/// watch session.
#[derive(Debug, Clone)]
pub struct SessionState {
    calibrator: TwoStepCalibrator,
    arch: Arch,
    upper_arm_m: f64,
    lower_arm_m: f64,
    last_seq: Option<u32>,
    ring: VecDeque<(FeatureVector, f64)>,
    transitions: Vec<(Phase, f64)>,
}

impl SessionState {
    pub fn new(arch: Arch, upper_arm_m: f64, lower_arm_m: f64) -> Self {
        SessionState {
            calibrator: TwoStepCalibrator::default(),
            arch,
            upper_arm_m,
            lower_arm_m,
            last_seq: None,
            ring: VecDeque::with_capacity(SEQ_LEN),
            transitions: Vec::new(),
        }
    }

    pub fn phase(&self) -> Phase {
        self.calibrator.phase()
    }

    pub fn ring_len(&self) -> usize {
        self.ring.len()
    }

    /// Phase changes with the packet timestamp that caused them.
    pub fn transitions(&self) -> &[(Phase, f64)] {
        &self.transitions
    }

    pub fn ingest(&mut self, pkt: &SensorPacket) -> Result<Ingest, StreamError> {
        if let Some(last) = self.last_seq {
            if pkt.seq == last {
                return Ok(Ingest::Duplicate);
            }
            if pkt.seq < last {
                return Ok(Ingest::OutOfOrder);
            }
        }
        let frame = pkt.to_frame();
        let before = self.calibrator.phase();
        let phase = self.calibrator.feed(frame.t, frame.pres, frame.theta)?;
        self.last_seq = Some(pkt.seq);
        if phase != before {
            for p in [Phase::AwaitRotationCal, Phase::Running] {
                if p > before && p <= phase && !self.transitions.iter().any(|(q, _)| *q == p) {
                    log::info!("phase {p:?} at t = {:.0} ms", frame.t);
                    self.transitions.push((p, frame.t));
                }
            }
        }
        if phase != Phase::Running {
            return Ok(Ingest::Calibrating(phase));
        }
        let state = self.calibrator.state().expect("running implies calibrated");
        let f = features_from_sensor(&frame, self.lower_arm_m, self.upper_arm_m, state)?;
        if self.ring.len() == SEQ_LEN {
            self.ring.pop_front();
        }
        self.ring.push_back((f, frame.t));
        let input = match self.arch {
            Arch::Feedforward => ModelInput::Frame(f),
            Arch::Recurrent => {
                let window: Vec<_> = self.ring.iter().copied().collect();
                match SequenceSample::from_window(&window) {
                    Some(s) => ModelInput::Sequence(s),
                    None => return Ok(Ingest::Warmup),
                }
            }
        };
        Ok(Ingest::Ready(Job { seq: pkt.seq, t: frame.t, input }))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::SensorFrame;
    use crate::rotmath::Quaternion;

    fn pkt(seq: u32, t: f64) -> SensorPacket {
        let mut frame = SensorFrame::from_values(t, &[0.0; 14]);
        frame.theta = Quaternion::IDENTITY;
        frame.pres = 1000.0;
        SensorPacket::from_frame(&frame, seq)
    }

    #[test]
    fn phase_schedule_and_warmup() {
        let mut s = SessionState::new(Arch::Recurrent, 0.3, 0.26);
        let mut first_ready = None;
        for k in 0..400u32 {
            let t = 20.0 * k as f64;
            match s.ingest(&pkt(k, t)).unwrap() {
                Ingest::Calibrating(p) => assert_eq!(p, if t < 3000.0 { Phase::AwaitPressureCal } else { Phase::AwaitRotationCal }),
                Ingest::Warmup => assert!(t >= 6000.0 && first_ready.is_none()),
                Ingest::Ready(job) => {
                    first_ready.get_or_insert(job.t);
                    assert!(matches!(job.input, ModelInput::Sequence(_)));
                }
                other => panic!("{other:?}"),
            }
            assert!(s.ring_len() <= SEQ_LEN);
        }
        assert_eq!(s.transitions(), &[(Phase::AwaitRotationCal, 3000.0), (Phase::Running, 6000.0)]);
        assert_eq!(first_ready, Some(6000.0 + 5.0 * 20.0));
    }

    #[test]
    fn feedforward_serves_immediately() {
        let mut s = SessionState::new(Arch::Feedforward, 0.3, 0.26);
        let mut ready = 0;
        for k in 0..310u32 {
            if let Ingest::Ready(job) = s.ingest(&pkt(k, 20.0 * k as f64)).unwrap() {
                assert!(job.t >= 6000.0);
                ready += 1;
            }
        }
        assert_eq!(ready, 10);
    }

    #[test]
    fn duplicates_and_reordering_are_dropped() {
        let mut s = SessionState::new(Arch::Feedforward, 0.3, 0.26);
        assert!(matches!(s.ingest(&pkt(5, 0.0)).unwrap(), Ingest::Calibrating(_)));
        assert_eq!(s.ingest(&pkt(5, 0.0)).unwrap(), Ingest::Duplicate);
        assert_eq!(s.ingest(&pkt(4, 0.0)).unwrap(), Ingest::OutOfOrder);
        assert!(matches!(s.ingest(&pkt(7, 40.0)).unwrap(), Ingest::Calibrating(_)));
    }
}
