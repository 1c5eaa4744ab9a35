//! Reward channels.
//!
//! Every regularization term is computed as a raw quantity and multiplied by
//! its coefficient. Penalty terms use non-negative magnitudes so that their
//! negative coefficients make them penalties.

use serde::{Deserialize, Serialize};

use crate::sim::dynamics::ContactInfo;
use crate::sim::randomization::Command;
use crate::sim::robot::{RobotState, NUM_JOINTS};

pub const TRACKING_SIGMA: f64 = 0.25;
pub const MAX_CONTACT_FORCE: f64 = 30.0;
pub const STAND_STILL_COMMAND: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardCoefficients {
    pub collision: f64,
    pub feet_contact_forces: f64,
    pub action_rate: f64,
    pub torques: f64,
    pub delta_torques: f64,
    pub tracking_lin_vel: f64,
    pub tracking_ang_vel: f64,
    pub feet_drag: f64,
    pub ang_vel: f64,
    pub stand_still: f64,
    pub joint_acc: f64,
}

impl Default for RewardCoefficients {
    fn default() -> Self {
        Self {
            collision: -0.5,
            feet_contact_forces: -1.0,
            action_rate: -0.2,
            torques: -2.5e-5,
            delta_torques: -1.0e-3,
            tracking_lin_vel: 1.0,
            tracking_ang_vel: 0.5,
            // Multiplies a non-positive drag magnitude.
            feet_drag: 0.5,
            ang_vel: -0.1,
            stand_still: -0.2,
            joint_acc: -1.25e-8,
        }
    }
}

/// Weights of the three components of the combined reward and of the
/// self-imitation reward inside the imitation channel.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RewardWeights {
    pub termination: f64,
    pub regularization: f64,
    pub residual: f64,
    pub imitation: f64,
}

impl Default for RewardWeights {
    fn default() -> Self {
        Self {
            termination: 1.0,
            regularization: 1.0,
            residual: 0.15,
            imitation: 1.0,
        }
    }
}

/// Everything the regularization terms look at for one control step.
#[derive(Clone, Copy, Debug)]
pub struct StepSignals<'a> {
    pub state: &'a RobotState,
    pub prev_joint_vel: &'a [f64; NUM_JOINTS],
    pub action: &'a [f64; NUM_JOINTS],
    pub prev_action: &'a [f64; NUM_JOINTS],
    pub command: &'a Command,
    pub torques: &'a [f64; NUM_JOINTS],
    pub prev_torques: &'a [f64; NUM_JOINTS],
    pub contacts: &'a [ContactInfo; 2],
    pub stand_pose: &'a [f64; NUM_JOINTS],
    pub control_dt: f64,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RewardBreakdown {
    pub tracking_lin_vel: f64,
    pub tracking_ang_vel: f64,
    pub action_rate: f64,
    pub torques: f64,
    pub delta_torques: f64,
    pub feet_contact_forces: f64,
    pub feet_drag: f64,
    pub ang_vel: f64,
    pub stand_still: f64,
    pub joint_acc: f64,
    pub r_t: f64,
    pub r_r: f64,
    pub r_res: f64,
    pub r_si: f64,
    pub r_c: f64,
}

impl RewardBreakdown {
    pub const COLUMNS: [&'static str; 15] = [
        "tracking_lin_vel",
        "tracking_ang_vel",
        "action_rate",
        "torques",
        "delta_torques",
        "feet_contact_forces",
        "feet_drag",
        "ang_vel",
        "stand_still",
        "joint_acc",
        "r_t",
        "r_r",
        "r_res",
        "r_si",
        "r_c",
    ];

    pub fn values(&self) -> [f64; 15] {
        [
            self.tracking_lin_vel,
            self.tracking_ang_vel,
            self.action_rate,
            self.torques,
            self.delta_torques,
            self.feet_contact_forces,
            self.feet_drag,
            self.ang_vel,
            self.stand_still,
            self.joint_acc,
            self.r_t,
            self.r_r,
            self.r_res,
            self.r_si,
            self.r_c,
        ]
    }

    pub fn accumulate(&mut self, other: &RewardBreakdown) {
        let mut v = self.values();
        for (a, b) in v.iter_mut().zip(other.values()) {
            *a += b;
        }
        *self = Self::from_values(v);
    }

    pub fn scaled(&self, factor: f64) -> Self {
        Self::from_values(self.values().map(|x| x * factor))
    }

    fn from_values(v: [f64; 15]) -> Self {
        Self {
            tracking_lin_vel: v[0],
            tracking_ang_vel: v[1],
            action_rate: v[2],
            torques: v[3],
            delta_torques: v[4],
            feet_contact_forces: v[5],
            feet_drag: v[6],
            ang_vel: v[7],
            stand_still: v[8],
            joint_acc: v[9],
            r_t: v[10],
            r_r: v[11],
            r_res: v[12],
            r_si: v[13],
            r_c: v[14],
        }
    }
}

fn sq_norm(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum()
}

/// Residual anchor to the frozen stage-1 policy, before its weight.
pub fn residual_reward(action: &[f64], action_flat: &[f64], iteration: u64, t1: u64, t2: u64) -> f64 {
    if iteration < t1 || iteration >= t2 {
        return 0.0;
    }
    -sq_norm(action, action_flat).sqrt()
}

pub fn termination_penalty(collision: bool, coeffs: &RewardCoefficients) -> f64 {
    if collision {
        coeffs.collision
    } else {
        0.0
    }
}

/// Weighted regularization terms; fills the per-term fields and `r_r`.
pub fn regularization_reward(s: &StepSignals, coeffs: &RewardCoefficients) -> RewardBreakdown {
    let r = s.state;
    let vx_err = s.command.target_vx - r.base_vx;
    let tracking_lin_vel = (-(vx_err * vx_err) / TRACKING_SIGMA).exp();
    let tracking_ang_vel = (-(r.pitch_rate * r.pitch_rate) / TRACKING_SIGMA).exp();
    let action_rate = sq_norm(s.action, s.prev_action);
    let torques = s.torques.iter().map(|t| t * t).sum::<f64>();
    let delta_torques = sq_norm(s.torques, s.prev_torques);
    let joint_acc = sq_norm(&r.joint_vel, s.prev_joint_vel) / (s.control_dt * s.control_dt);
    let contact_excess: f64 = s
        .contacts
        .iter()
        .map(|c| (c.normal_force - MAX_CONTACT_FORCE).max(0.0))
        .sum();
    let drag: f64 = s
        .contacts
        .iter()
        .filter(|c| c.in_contact)
        .map(|c| c.tangential_speed)
        .sum();
    let stand_still = if s.command.target_vx.abs() < STAND_STILL_COMMAND {
        sq_norm(&r.joint_pos, s.stand_pose).sqrt()
    } else {
        0.0
    };

    let mut b = RewardBreakdown {
        tracking_lin_vel: coeffs.tracking_lin_vel * tracking_lin_vel,
        tracking_ang_vel: coeffs.tracking_ang_vel * tracking_ang_vel,
        action_rate: coeffs.action_rate * action_rate,
        torques: coeffs.torques * torques,
        delta_torques: coeffs.delta_torques * delta_torques,
        feet_contact_forces: coeffs.feet_contact_forces * contact_excess,
        feet_drag: coeffs.feet_drag * -drag,
        ang_vel: coeffs.ang_vel * r.pitch_rate * r.pitch_rate,
        stand_still: coeffs.stand_still * stand_still,
        joint_acc: coeffs.joint_acc * joint_acc,
        ..Default::default()
    };
    b.r_r = b.values()[..10].iter().sum();
    b
}

/// Combined reward from its three components.
pub fn combined_reward(r_t: f64, r_r: f64, r_res: f64, w: &RewardWeights) -> f64 {
    w.termination * r_t + w.regularization * r_r + w.residual * r_res
}

/// Full per-step breakdown with the combined reward filled in.
pub fn compute_rewards(
    signals: &StepSignals,
    collision: bool,
    r_res: f64,
    r_si: f64,
    coeffs: &RewardCoefficients,
    weights: &RewardWeights,
) -> RewardBreakdown {
    let mut b = regularization_reward(signals, coeffs);
    b.r_t = termination_penalty(collision, coeffs);
    b.r_res = r_res;
    b.r_si = weights.imitation * r_si;
    b.r_c = combined_reward(b.r_t, b.r_r, b.r_res, weights);
    b
}

#[cfg(test)]
mod tests {
    use super::*;

    struct Fixture {
        state: RobotState,
        zeros: [f64; 4],
        action: [f64; 4],
        command: Command,
        contacts: [ContactInfo; 2],
    }

    impl Fixture {
        fn new() -> Self {
            Self {
                state: RobotState {
                    base_vx: 0.5,
                    base_z: 0.2,
                    ..Default::default()
                },
                zeros: [0.0; 4],
                action: [0.1, -0.2, 0.3, 0.0],
                command: Command { target_vx: 0.5 },
                contacts: [ContactInfo::default(); 2],
            }
        }

        fn signals(&self) -> StepSignals<'_> {
            StepSignals {
                state: &self.state,
                prev_joint_vel: &self.zeros,
                action: &self.action,
                prev_action: &self.action,
                command: &self.command,
                torques: &self.zeros,
                prev_torques: &self.zeros,
                contacts: &self.contacts,
                stand_pose: &self.zeros,
                control_dt: 0.02,
            }
        }
    }

    #[test]
    fn residual_branches() {
        let a = [1.0, 0.0, 0.0, 0.0];
        let z = [0.0; 4];
        assert_eq!(residual_reward(&a, &z, 5, 10, 20), 0.0);
        assert_eq!(residual_reward(&a, &a, 12, 10, 20), 0.0);
        assert_eq!(residual_reward(&a, &z, 10, 10, 20), -1.0);
        assert_eq!(residual_reward(&a, &z, 20, 10, 20), 0.0);
    }

    #[test]
    fn termination_values() {
        let c = RewardCoefficients::default();
        assert_eq!(termination_penalty(false, &c), 0.0);
        assert_eq!(termination_penalty(true, &c), -0.5);
    }

    #[test]
    fn regularization_trivial_cases() {
        let f = Fixture::new();
        let c = RewardCoefficients::default();
        let b = regularization_reward(&f.signals(), &c);
        assert_eq!(b.tracking_lin_vel, c.tracking_lin_vel);
        assert_eq!(b.tracking_ang_vel, c.tracking_ang_vel);
        assert_eq!(b.torques, 0.0);
        assert_eq!(b.delta_torques, 0.0);
        assert_eq!(b.action_rate, 0.0);
        assert_eq!(b.stand_still, 0.0);
        assert!((b.r_r - 1.5).abs() < 1e-12);
    }

    #[test]
    fn penalties_are_penalties() {
        let mut f = Fixture::new();
        f.state.joint_vel = [1.0; 4];
        f.state.pitch_rate = 0.5;
        f.command.target_vx = 0.0;
        f.state.joint_pos = [0.3; 4];
        f.contacts[0] = ContactInfo {
            in_contact: true,
            normal_force: 40.0,
            tangential_force: 1.0,
            tangential_speed: 0.2,
        };
        let prev_action = [0.0; 4];
        let torques = [0.5; 4];
        let mut s = f.signals();
        s.prev_action = &prev_action;
        s.torques = &torques;
        let b = regularization_reward(&s, &RewardCoefficients::default());
        for v in [
            b.action_rate,
            b.torques,
            b.delta_torques,
            b.feet_contact_forces,
            b.feet_drag,
            b.ang_vel,
            b.stand_still,
            b.joint_acc,
        ] {
            assert!(v < 0.0, "{b:?}");
        }
        assert!((b.feet_contact_forces + 10.0).abs() < 1e-12);
    }

    #[test]
    fn combined_is_linear() {
        let w = RewardWeights::default();
        let a = combined_reward(-0.5, 1.2, -0.3, &w);
        let b = combined_reward(-1.0, 2.4, -0.6, &w);
        assert!((b - 2.0 * a).abs() < 1e-12);
        assert!((a - (-0.5 + 1.2 - 0.15 * 0.3)).abs() < 1e-12);
    }

    #[test]
    fn breakdown_accumulates() {
        let f = Fixture::new();
        let c = RewardCoefficients::default();
        let b = compute_rewards(&f.signals(), true, -1.0, 0.5, &c, &RewardWeights::default());
        let mut sum = RewardBreakdown::default();
        sum.accumulate(&b);
        sum.accumulate(&b);
        assert_eq!(sum.scaled(0.5), b);
        assert_eq!(b.r_si, 0.5);
        assert!((b.r_c - (-0.5 + b.r_r - 0.15)).abs() < 1e-12);
    }
}
