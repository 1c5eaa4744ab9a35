//! Geometry and kinematics of the planar quadruped analog.
//!
//! Frame conventions: world `x` forward, `z` up. `pitch` is positive
//! nose-down. Joint order is front hip, front knee, rear hip, rear knee.
//! A hip angle of zero points the thigh straight down in the body frame and
//! positive angles swing the knee forward; the knee angle is relative to the
//! thigh.

use serde::{Deserialize, Serialize};

use crate::error::{KirasError, Result};

pub const THIGH_LENGTH: f64 = 0.16;
pub const SHANK_LENGTH: f64 = 0.16;
/// Distance from the base origin to each hip along the body axis.
pub const HIP_OFFSET: f64 = 0.19;
pub const BASE_MASS: f64 = 2.0;
pub const NUM_JOINTS: usize = 4;
/// Joint soft limit, both signs.
pub const JOINT_LIMIT: f64 = std::f64::consts::PI;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Leg {
    Front,
    Rear,
}

impl Leg {
    pub const ALL: [Leg; 2] = [Leg::Front, Leg::Rear];

    pub fn hip_body(self) -> [f64; 2] {
        match self {
            Leg::Front => [HIP_OFFSET, 0.0],
            Leg::Rear => [-HIP_OFFSET, 0.0],
        }
    }

    /// Index of the hip joint; the knee follows it.
    pub fn joint_offset(self) -> usize {
        match self {
            Leg::Front => 0,
            Leg::Rear => 2,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RobotState {
    pub base_x: f64,
    pub base_z: f64,
    pub pitch: f64,
    pub base_vx: f64,
    pub base_vz: f64,
    pub pitch_rate: f64,
    pub joint_pos: [f64; NUM_JOINTS],
    pub joint_vel: [f64; NUM_JOINTS],
}

impl RobotState {
    pub fn is_finite(&self) -> bool {
        [
            self.base_x,
            self.base_z,
            self.pitch,
            self.base_vx,
            self.base_vz,
            self.pitch_rate,
        ]
        .iter()
        .chain(&self.joint_pos)
        .chain(&self.joint_vel)
        .all(|v| v.is_finite())
    }

    /// Body-frame vector rotated into the world frame.
    #[inline]
    pub fn rotate(&self, v: [f64; 2]) -> [f64; 2] {
        rotate(self.pitch, v)
    }

    #[inline]
    pub fn body_to_world(&self, p: [f64; 2]) -> [f64; 2] {
        let r = self.rotate(p);
        [self.base_x + r[0], self.base_z + r[1]]
    }

    /// World velocity of a point fixed in the body at world offset `r` from
    /// the base origin.
    #[inline]
    pub fn rigid_point_velocity(&self, r: [f64; 2]) -> [f64; 2] {
        [
            self.base_vx + self.pitch_rate * r[1],
            self.base_vz - self.pitch_rate * r[0],
        ]
    }

    pub fn leg_joints(&self, leg: Leg) -> (f64, f64) {
        let o = leg.joint_offset();
        (self.joint_pos[o], self.joint_pos[o + 1])
    }

    /// Foot position in the world frame.
    pub fn foot_world(&self, leg: Leg) -> [f64; 2] {
        let (qh, qk) = self.leg_joints(leg);
        let hip = leg.hip_body();
        let f = foot_in_hip(qh, qk);
        self.body_to_world([hip[0] + f[0], hip[1] + f[1]])
    }

    /// Foot velocity in the world frame, including joint motion.
    pub fn foot_velocity(&self, leg: Leg) -> [f64; 2] {
        let o = leg.joint_offset();
        let (qh, qk) = self.leg_joints(leg);
        let hip = leg.hip_body();
        let f = foot_in_hip(qh, qk);
        let r = self.rotate([hip[0] + f[0], hip[1] + f[1]]);
        let rigid = self.rigid_point_velocity(r);
        let j = leg_jacobian(qh, qk);
        let local = [
            j[0][0] * self.joint_vel[o] + j[0][1] * self.joint_vel[o + 1],
            j[1][0] * self.joint_vel[o] + j[1][1] * self.joint_vel[o + 1],
        ];
        let w = self.rotate(local);
        [rigid[0] + w[0], rigid[1] + w[1]]
    }
}

#[inline]
pub fn rotate(pitch: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = pitch.sin_cos();
    [c * v[0] + s * v[1], -s * v[0] + c * v[1]]
}

#[inline]
pub fn rotate_inverse(pitch: f64, v: [f64; 2]) -> [f64; 2] {
    let (s, c) = pitch.sin_cos();
    [c * v[0] - s * v[1], s * v[0] + c * v[1]]
}

/// Foot position relative to the hip, body frame.
#[inline]
pub fn foot_in_hip(q_hip: f64, q_knee: f64) -> [f64; 2] {
    let a = q_hip + q_knee;
    [
        THIGH_LENGTH * q_hip.sin() + SHANK_LENGTH * a.sin(),
        -THIGH_LENGTH * q_hip.cos() - SHANK_LENGTH * a.cos(),
    ]
}

#[inline]
pub fn knee_in_hip(q_hip: f64) -> [f64; 2] {
    [THIGH_LENGTH * q_hip.sin(), -THIGH_LENGTH * q_hip.cos()]
}

/// `d(foot_in_hip) / d(q_hip, q_knee)`, row-major `[[dx/dqh, dx/dqk], [dz/dqh, dz/dqk]]`.
#[inline]
pub fn leg_jacobian(q_hip: f64, q_knee: f64) -> [[f64; 2]; 2] {
    let a = q_hip + q_knee;
    let (sa, ca) = a.sin_cos();
    let (sh, ch) = q_hip.sin_cos();
    [
        [THIGH_LENGTH * ch + SHANK_LENGTH * ca, SHANK_LENGTH * ca],
        [THIGH_LENGTH * sh + SHANK_LENGTH * sa, SHANK_LENGTH * sa],
    ]
}

/// Closed-form two-link inverse kinematics, knee-backward branch.
pub fn leg_ik(foot: [f64; 2]) -> Result<(f64, f64)> {
    let d2 = foot[0] * foot[0] + foot[1] * foot[1];
    let d = d2.sqrt();
    let reach = THIGH_LENGTH + SHANK_LENGTH;
    let tol = 1e-9;
    if d > reach + tol || d < (THIGH_LENGTH - SHANK_LENGTH).abs() - tol || d < 1e-6 {
        return Err(KirasError::OutOfWorkspace(format!(
            "foot distance {d:.4} m outside [{:.3}, {reach:.3}] m",
            (THIGH_LENGTH - SHANK_LENGTH).abs()
        )));
    }
    let cos_knee = ((d2 - THIGH_LENGTH * THIGH_LENGTH - SHANK_LENGTH * SHANK_LENGTH)
        / (2.0 * THIGH_LENGTH * SHANK_LENGTH))
        .clamp(-1.0, 1.0);
    let q_knee = cos_knee.acos();
    let q_hip = foot[0].atan2(-foot[1])
        - (SHANK_LENGTH * q_knee.sin()).atan2(THIGH_LENGTH + SHANK_LENGTH * q_knee.cos());
    Ok((q_hip, q_knee))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn jacobian_matches_differences() {
        let (qh, qk) = (-0.7, 1.4);
        let j = leg_jacobian(qh, qk);
        let h = 1e-6;
        for (col, (dh, dk)) in [(h, 0.0), (0.0, h)].into_iter().enumerate() {
            let p = foot_in_hip(qh + dh, qk + dk);
            let m = foot_in_hip(qh - dh, qk - dk);
            for row in 0..2 {
                let fd = (p[row] - m[row]) / (2.0 * h);
                assert!((fd - j[row][col]).abs() < 1e-8);
            }
        }
    }

    #[test]
    fn ik_round_trip_and_branch() {
        for &(x, z) in &[(0.0, -0.2), (0.05, -0.12), (-0.08, -0.25), (0.0, -0.319)] {
            let (qh, qk) = leg_ik([x, z]).unwrap();
            assert!(qk >= 0.0, "knee-backward branch");
            let f = foot_in_hip(qh, qk);
            assert!((f[0] - x).abs() < 1e-12 && (f[1] - z).abs() < 1e-12);
            // Knee sits behind the hip-foot line.
            let k = knee_in_hip(qh);
            let cross = x * k[1] - z * k[0];
            assert!(cross <= 1e-12);
        }
        assert!(leg_ik([0.0, -0.5]).is_err());
    }

    #[test]
    fn rotation_inverse() {
        let v = [0.3, -0.2];
        let r = rotate_inverse(0.4, rotate(0.4, v));
        assert!((r[0] - v[0]).abs() < 1e-15 && (r[1] - v[1]).abs() < 1e-15);
        // Nose-down pitch lowers the front of the body.
        assert!(rotate(0.2, [1.0, 0.0])[1] < 0.0);
    }
}
