//! Observation layouts.
//!
//! Proprioceptive vector (actor side), with `n` skills:
//!
//! | index          | content                          |
//! |----------------|----------------------------------|
//! | 0              | pitch                            |
//! | 1              | commanded forward velocity       |
//! | 2 .. 2+n       | skill one-hot                    |
//! | 2+n .. 6+n     | joint position minus default     |
//! | 6+n .. 10+n    | joint velocity x 0.05            |
//! | 10+n .. 14+n   | previous action                  |
//!
//! The privileged vector (critic side) is the proprioceptive vector followed
//! by base velocity x 2 (vx, vz), pitch rate x 0.25, projected gravity in the
//! body frame, foot heights above the local terrain (front, rear) and nine
//! base-relative terrain height samples from 0 to 0.4 m ahead of the base.

use std::collections::VecDeque;

use serde::{Deserialize, Serialize};

use super::randomization::Command;
use super::robot::{Leg, RobotState, NUM_JOINTS};
use super::terrain::TerrainMap;
use crate::error::{KirasError, Result};
use crate::keyframes::ImitationFrame;

pub const JOINT_VEL_SCALE: f64 = 0.05;
pub const BASE_VEL_SCALE: f64 = 2.0;
pub const PITCH_RATE_SCALE: f64 = 0.25;
pub const HEIGHT_SAMPLES: usize = 9;
pub const HEIGHT_SAMPLE_SPACING: f64 = 0.05;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ObsLayout {
    pub num_skills: usize,
}

impl ObsLayout {
    pub const PITCH: usize = 0;
    pub const COMMAND: usize = 1;
    pub const SKILL: usize = 2;
    const PRIVILEGED_EXTRA: usize = 2 + 1 + 2 + 2 + HEIGHT_SAMPLES;

    pub fn new(num_skills: usize) -> Self {
        Self { num_skills }
    }

    pub fn joint_error(&self) -> usize {
        Self::SKILL + self.num_skills
    }

    pub fn joint_vel(&self) -> usize {
        self.joint_error() + NUM_JOINTS
    }

    pub fn prev_action(&self) -> usize {
        self.joint_vel() + NUM_JOINTS
    }

    pub fn proprio_dim(&self) -> usize {
        self.prev_action() + NUM_JOINTS
    }

    pub fn privileged_dim(&self) -> usize {
        self.proprio_dim() + Self::PRIVILEGED_EXTRA
    }

    /// First terrain height sample inside the privileged vector.
    pub fn height_samples(&self) -> usize {
        self.privileged_dim() - HEIGHT_SAMPLES
    }

    pub fn imitation_dim(&self) -> usize {
        ImitationFrame::dim(self.num_skills)
    }
}

/// Sliding window of past proprioceptive observations, oldest first.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ProprioHistory {
    capacity: usize,
    frames: VecDeque<Vec<f64>>,
}

impl ProprioHistory {
    pub fn new(capacity: usize) -> Self {
        Self {
            capacity,
            frames: VecDeque::with_capacity(capacity),
        }
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn is_full(&self) -> bool {
        self.frames.len() == self.capacity
    }

    pub fn clear(&mut self) {
        self.frames.clear();
    }

    /// Fills the window with copies of `frame`.
    pub fn pad_with(&mut self, frame: &[f64]) {
        self.frames.clear();
        for _ in 0..self.capacity {
            self.frames.push_back(frame.to_vec());
        }
    }

    pub fn push(&mut self, frame: Vec<f64>) {
        if self.frames.len() == self.capacity {
            self.frames.pop_front();
        }
        self.frames.push_back(frame);
    }

    pub fn latest_mut(&mut self) -> Option<&mut Vec<f64>> {
        self.frames.back_mut()
    }

    pub fn flatten(&self) -> Vec<f64> {
        self.frames.iter().flat_map(|f| f.iter().copied()).collect()
    }

    /// Inserts a zero entry at `position` of every stored frame.
    pub fn insert_zero_column(&mut self, position: usize) {
        for f in &mut self.frames {
            f.insert(position, 0.0);
        }
    }
}

/// Everything one control step exposes to the learners.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ObservationBundle {
    pub proprio: Vec<f64>,
    pub privileged: Vec<f64>,
    pub imitation: ImitationFrame,
    /// The last `H` proprioceptive vectors up to and including this step,
    /// oldest first, flattened.
    pub history: Vec<f64>,
}

fn check_onehot(v: &[f64]) -> Result<()> {
    let ones = v.iter().filter(|&&x| x == 1.0).count();
    let zeros = v.iter().filter(|&&x| x == 0.0).count();
    if ones == 1 && ones + zeros == v.len() {
        Ok(())
    } else {
        Err(KirasError::InvalidArgument(format!("skill vector {v:?} is not one-hot")))
    }
}

pub fn base_height(state: &RobotState, terrain: &TerrainMap) -> f64 {
    state.base_z - terrain.height_at(state.base_x)
}

pub fn proprio_vector(
    state: &RobotState,
    command: &Command,
    skill_onehot: &[f64],
    prev_action: &[f64; NUM_JOINTS],
    default_joint_pos: &[f64; NUM_JOINTS],
) -> Vec<f64> {
    let layout = ObsLayout::new(skill_onehot.len());
    let mut v = Vec::with_capacity(layout.proprio_dim());
    v.push(state.pitch);
    v.push(command.target_vx);
    v.extend_from_slice(skill_onehot);
    v.extend(state.joint_pos.iter().zip(default_joint_pos).map(|(q, d)| q - d));
    v.extend(state.joint_vel.iter().map(|w| w * JOINT_VEL_SCALE));
    v.extend_from_slice(prev_action);
    v
}

/// Appends the critic-only terms to a proprioceptive vector.
pub fn privileged_vector(proprio: &[f64], state: &RobotState, terrain: &TerrainMap) -> Vec<f64> {
    let mut v = Vec::with_capacity(proprio.len() + ObsLayout::PRIVILEGED_EXTRA);
    v.extend_from_slice(proprio);
    v.push(state.base_vx * BASE_VEL_SCALE);
    v.push(state.base_vz * BASE_VEL_SCALE);
    v.push(state.pitch_rate * PITCH_RATE_SCALE);
    let (s, c) = state.pitch.sin_cos();
    v.push(s);
    v.push(-c);
    for leg in Leg::ALL {
        let f = state.foot_world(leg);
        v.push(f[1] - terrain.height_at(f[0]));
    }
    for k in 0..HEIGHT_SAMPLES {
        let x = state.base_x + k as f64 * HEIGHT_SAMPLE_SPACING;
        v.push(state.base_z - terrain.height_at(x));
    }
    v
}

pub fn imitation_frame(state: &RobotState, skill_onehot: &[f64], terrain: &TerrainMap) -> ImitationFrame {
    ImitationFrame {
        pitch: state.pitch,
        skill_onehot: skill_onehot.to_vec(),
        joint_pos: state.joint_pos,
        base_height: base_height(state, terrain),
    }
}

/// Builds the observation bundle for the current step and pushes the new
/// proprioceptive vector into `history`. A history that is not yet full is
/// padded with copies of the current frame.
#[allow(clippy::too_many_arguments)]
pub fn observe(
    state: &RobotState,
    command: &Command,
    skill_onehot: &[f64],
    terrain: &TerrainMap,
    prev_action: &[f64; NUM_JOINTS],
    default_joint_pos: &[f64; NUM_JOINTS],
    history: &mut ProprioHistory,
) -> Result<ObservationBundle> {
    check_onehot(skill_onehot)?;
    let proprio = proprio_vector(state, command, skill_onehot, prev_action, default_joint_pos);
    let privileged = privileged_vector(&proprio, state, terrain);
    if history.is_full() {
        history.push(proprio.clone());
    } else {
        history.pad_with(&proprio);
    }
    let past = history.flatten();
    Ok(ObservationBundle {
        proprio,
        privileged,
        imitation: imitation_frame(state, skill_onehot, terrain),
        history: past,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyframes::{keyframe_from_posture, onehot, phi, ImitationFrame};

    fn bundle(state: &RobotState, skill: usize) -> ObservationBundle {
        let mut h = ProprioHistory::new(4);
        observe(
            state,
            &Command { target_vx: 0.3 },
            &onehot(skill, 5),
            &TerrainMap::flat(),
            &[0.0; 4],
            &[0.0; 4],
            &mut h,
        )
        .unwrap()
    }

    #[test]
    fn layout_dimensions() {
        let l = ObsLayout::new(5);
        assert_eq!(l.proprio_dim(), 19);
        assert_eq!(l.privileged_dim(), 35);
        assert_eq!(l.imitation_dim(), 11);
        let s = RobotState {
            base_z: 0.2,
            ..Default::default()
        };
        let b = bundle(&s, 2);
        assert_eq!(b.proprio.len(), l.proprio_dim());
        assert_eq!(b.privileged.len(), l.privileged_dim());
        assert_eq!(b.history.len(), 4 * l.proprio_dim());
        assert_eq!(&b.proprio[2..7], &[0.0, 0.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn flat_height_samples_constant() {
        let s = RobotState {
            base_x: 1.3,
            base_z: 0.21,
            ..Default::default()
        };
        let b = bundle(&s, 0);
        let l = ObsLayout::new(5);
        let hs = &b.privileged[l.height_samples()..];
        assert_eq!(hs.len(), HEIGHT_SAMPLES);
        assert!(hs.iter().all(|&h| h == 0.21));
    }

    #[test]
    fn observe_is_pure_given_history() {
        let s = RobotState {
            base_z: 0.2,
            joint_vel: [0.1, -0.2, 0.3, 0.0],
            ..Default::default()
        };
        assert_eq!(bundle(&s, 1), bundle(&s, 1));
    }

    #[test]
    fn rejects_non_onehot_skill() {
        let mut h = ProprioHistory::new(4);
        let r = observe(
            &RobotState::default(),
            &Command::default(),
            &[0.5, 0.5],
            &TerrainMap::flat(),
            &[0.0; 4],
            &[0.0; 4],
            &mut h,
        );
        assert!(r.is_err());
    }

    #[test]
    fn phi_round_trips_keyframe_and_ignores_velocity() {
        let k = keyframe_from_posture(3, "pitch_up", 0.2, -15f64.to_radians()).unwrap();
        let s = k.robot_state();
        let b = bundle(&s, 3);
        assert_eq!(phi(&b), ImitationFrame::from_keyframe(&k, 5));
        let mut moving = s;
        moving.joint_vel = [3.0, -2.0, 1.0, 0.5];
        assert_eq!(phi(&bundle(&moving, 3)), phi(&b));
        assert_eq!(phi(&bundle(&s, 0)).skill_onehot, vec![1.0, 0.0, 0.0, 0.0, 0.0]);
    }

    #[test]
    fn history_slides() {
        let mut h = ProprioHistory::new(3);
        h.pad_with(&[1.0]);
        h.push(vec![2.0]);
        h.push(vec![3.0]);
        assert_eq!(h.flatten(), vec![1.0, 2.0, 3.0]);
        h.push(vec![4.0]);
        assert_eq!(h.flatten(), vec![2.0, 3.0, 4.0]);
    }
}
