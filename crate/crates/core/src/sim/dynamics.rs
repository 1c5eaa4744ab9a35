//! Rigid base with two massless two-link legs, penalty contacts and PD
//! actuation, integrated with semi-implicit Euler.
//!
//! Each sagittal leg stands in for a left/right pair of real legs, so every
//! joint here is driven by two motors. Motor torques are clamped at the
//! per-motor limit and summed onto the lumped joint.

use serde::{Deserialize, Serialize};

use super::randomization::DomainRandomization;
use super::robot::{leg_jacobian, Leg, RobotState, BASE_MASS, HIP_OFFSET, JOINT_LIMIT, NUM_JOINTS};
use super::terrain::TerrainMap;
use crate::error::{KirasError, Result};

/// Minimum clearance between base body points and the ground before the
/// episode counts as a collision.
pub const BODY_CLEARANCE: f64 = 0.02;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimParams {
    pub dt: f64,
    pub decimation: u32,
    pub gravity: f64,
    pub contact_enabled: bool,
    pub kp: f64,
    pub kd: f64,
    pub motor_torque_limit: f64,
    pub motors_per_joint: f64,
    pub contact_stiffness: f64,
    pub contact_damping: f64,
    pub tangential_stiffness: f64,
    pub tangential_damping: f64,
    pub joint_inertia: f64,
    pub joint_damping: f64,
    pub base_length: f64,
}

impl Default for SimParams {
    fn default() -> Self {
        Self {
            dt: 0.005,
            decimation: 4,
            gravity: 9.81,
            contact_enabled: true,
            kp: 4.0,
            kd: 0.1,
            motor_torque_limit: 1.0,
            motors_per_joint: 2.0,
            contact_stiffness: 2000.0,
            contact_damping: 50.0,
            tangential_stiffness: 2000.0,
            tangential_damping: 15.0,
            joint_inertia: 0.02,
            joint_damping: 0.02,
            base_length: 2.0 * HIP_OFFSET + 0.04,
        }
    }
}

impl SimParams {
    pub fn control_dt(&self) -> f64 {
        self.dt * self.decimation as f64
    }
}

/// Target buffer implementing the actuation delay. A command that differs
/// from the pending one only takes effect after the configured number of
/// substeps; until then the previous command is applied.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActuatorState {
    pub previous_target: [f64; NUM_JOINTS],
    pub pending_target: [f64; NUM_JOINTS],
    pub substeps_since_command: u32,
    pub last_torque: [f64; NUM_JOINTS],
}

impl ActuatorState {
    pub fn holding(targets: [f64; NUM_JOINTS]) -> Self {
        Self {
            previous_target: targets,
            pending_target: targets,
            substeps_since_command: u32::MAX,
            last_torque: [0.0; NUM_JOINTS],
        }
    }

    fn command(&mut self, targets: &[f64; NUM_JOINTS]) {
        let changed = targets
            .iter()
            .zip(&self.pending_target)
            .any(|(a, b)| a.to_bits() != b.to_bits());
        if changed {
            self.previous_target = self.pending_target;
            self.pending_target = *targets;
            self.substeps_since_command = 0;
        }
    }

    fn applied(&mut self, delay_substeps: u32) -> [f64; NUM_JOINTS] {
        let t = if self.substeps_since_command < delay_substeps {
            self.previous_target
        } else {
            self.pending_target
        };
        self.substeps_since_command = self.substeps_since_command.saturating_add(1);
        t
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SimState {
    pub robot: RobotState,
    pub actuator: ActuatorState,
    /// World point where each foot's tangential spring is attached while
    /// the foot sticks; `None` when the foot is airborne.
    pub contact_anchor: [Option<[f64; 2]>; 2],
    pub substep: u64,
}

impl SimState {
    /// State whose actuators hold the current joint positions.
    pub fn new(robot: RobotState) -> Self {
        Self {
            robot,
            actuator: ActuatorState::holding(robot.joint_pos),
            contact_anchor: [None; 2],
            substep: 0,
        }
    }

    pub fn time(&self, dt: f64) -> f64 {
        self.substep as f64 * dt
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ContactInfo {
    pub in_contact: bool,
    pub normal_force: f64,
    pub tangential_force: f64,
    pub tangential_speed: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct StepOutcome {
    pub state: SimState,
    pub contacts: [ContactInfo; 2],
    /// Base body touched the ground at some substep.
    pub collision: bool,
    /// Per-motor torques of the final substep.
    pub torques: [f64; NUM_JOINTS],
}

/// Contact force on a foot, world frame. Tangential friction is a spring
/// to `anchor` plus viscous damping, clamped to the Coulomb limit; the
/// anchor follows the foot while it slips.
fn foot_contact(
    robot: &RobotState,
    leg: Leg,
    anchor: &mut Option<[f64; 2]>,
    terrain: &TerrainMap,
    friction: f64,
    params: &SimParams,
) -> ([f64; 2], ContactInfo) {
    let p = robot.foot_world(leg);
    let h = terrain.height_at(p[0]);
    let slope = terrain.slope_at(p[0]);
    let norm = (1.0 + slope * slope).sqrt();
    let n = [-slope / norm, 1.0 / norm];
    let t = [1.0 / norm, slope / norm];
    let depth = (h - p[1]) * n[1];
    if depth <= 0.0 {
        *anchor = None;
        return ([0.0, 0.0], ContactInfo::default());
    }
    let v = robot.foot_velocity(leg);
    let vn = v[0] * n[0] + v[1] * n[1];
    let vt = v[0] * t[0] + v[1] * t[1];
    let fn_ = (params.contact_stiffness * depth - params.contact_damping * vn).max(0.0);
    let limit = friction * fn_;
    let a = anchor.get_or_insert(p);
    let disp = (p[0] - a[0]) * t[0] + (p[1] - a[1]) * t[1];
    let raw = -params.tangential_stiffness * disp - params.tangential_damping * vt;
    let ft = raw.clamp(-limit, limit);
    if raw != ft {
        let back = ft / params.tangential_stiffness;
        *a = [p[0] + back * t[0], p[1] + back * t[1]];
    }
    let f = [fn_ * n[0] + ft * t[0], fn_ * n[1] + ft * t[1]];
    (
        f,
        ContactInfo {
            in_contact: true,
            normal_force: fn_,
            tangential_force: ft,
            tangential_speed: vt.abs(),
        },
    )
}

fn base_collides(robot: &RobotState, terrain: &TerrainMap) -> bool {
    [[HIP_OFFSET, 0.0], [0.0, 0.0], [-HIP_OFFSET, 0.0]]
        .into_iter()
        .map(|p| robot.body_to_world(p))
        .any(|w| w[1] - terrain.height_at(w[0]) < BODY_CLEARANCE)
}

fn substep(
    state: &mut SimState,
    terrain: &TerrainMap,
    rand: &DomainRandomization,
    params: &SimParams,
) -> ([ContactInfo; 2], [f64; NUM_JOINTS]) {
    let dt = params.dt;
    let delay = (rand.actuation_delay_s / dt + 1e-9).floor() as u32;
    let target = state.actuator.applied(delay);
    let r = state.robot;

    let kp = params.kp * rand.pd_stiffness_mult;
    let kd = params.kd * rand.pd_damping_mult;
    let mut motor = [0.0; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        motor[j] = (kp * (target[j] - r.joint_pos[j]) - kd * r.joint_vel[j])
            .clamp(-params.motor_torque_limit, params.motor_torque_limit);
    }

    let mass = BASE_MASS + rand.payload_kg;
    let inertia = mass * params.base_length * params.base_length / 12.0;
    let mut force = [0.0, -mass * params.gravity];
    // Clockwise (nose-down) moment about the base origin.
    let com = r.rotate([rand.com_shift, 0.0]);
    let mut moment = -com[0] * force[1];
    let mut joint_acc = [0.0; NUM_JOINTS];
    for j in 0..NUM_JOINTS {
        joint_acc[j] = params.motors_per_joint * motor[j] - params.joint_damping * r.joint_vel[j];
    }

    let mut contacts = [ContactInfo::default(); 2];
    if params.contact_enabled {
        for (k, leg) in Leg::ALL.into_iter().enumerate() {
            let anchor = &mut state.contact_anchor[k];
            let (f, info) = foot_contact(&r, leg, anchor, terrain, rand.friction_coeff, params);
            contacts[k] = info;
            if !info.in_contact {
                continue;
            }
            let foot = r.foot_world(leg);
            let arm = [foot[0] - r.base_x, foot[1] - r.base_z];
            force[0] += f[0];
            force[1] += f[1];
            moment += arm[1] * f[0] - arm[0] * f[1];
            let o = leg.joint_offset();
            let (qh, qk) = r.leg_joints(leg);
            let jac = leg_jacobian(qh, qk);
            for c in 0..2 {
                let col = r.rotate([jac[0][c], jac[1][c]]);
                joint_acc[o + c] += col[0] * f[0] + col[1] * f[1];
            }
        }
    }

    let rb = &mut state.robot;
    rb.base_vx += force[0] / mass * dt;
    rb.base_vz += force[1] / mass * dt;
    rb.pitch_rate += moment / inertia * dt;
    rb.base_x += rb.base_vx * dt;
    rb.base_z += rb.base_vz * dt;
    rb.pitch += rb.pitch_rate * dt;
    for j in 0..NUM_JOINTS {
        rb.joint_vel[j] += joint_acc[j] / params.joint_inertia * dt;
        rb.joint_pos[j] += rb.joint_vel[j] * dt;
        if rb.joint_pos[j].abs() > JOINT_LIMIT {
            rb.joint_pos[j] = rb.joint_pos[j].clamp(-JOINT_LIMIT, JOINT_LIMIT);
            rb.joint_vel[j] = 0.0;
        }
    }

    state.substep += 1;
    let push_every = (rand.push_interval_s / dt).round().max(1.0) as u64;
    if rand.push_velocity != 0.0 && state.substep % push_every == 0 {
        state.robot.base_vx += rand.push_velocity;
    }
    state.actuator.last_torque = motor;
    (contacts, motor)
}

/// Advances one control step of `params.decimation` substeps.
pub fn step(
    state: &SimState,
    joint_targets: &[f64; NUM_JOINTS],
    terrain: &TerrainMap,
    rand: &DomainRandomization,
    params: &SimParams,
) -> Result<StepOutcome> {
    if joint_targets.iter().any(|t| !t.is_finite()) {
        return Err(KirasError::NonFinite("joint targets".into()));
    }
    let mut next = *state;
    next.actuator.command(joint_targets);
    let mut contacts = [ContactInfo::default(); 2];
    let mut torques = [0.0; NUM_JOINTS];
    let mut collision = false;
    for _ in 0..params.decimation {
        let (c, t) = substep(&mut next, terrain, rand, params);
        contacts = c;
        torques = t;
        if !next.robot.is_finite() {
            return Err(KirasError::SimulationDiverged {
                time: next.time(params.dt),
            });
        }
        collision |= params.contact_enabled && base_collides(&next.robot, terrain);
    }
    Ok(StepOutcome {
        state: next,
        contacts,
        collision,
        torques,
    })
}
