//! Skills as single keyframes and the imitation-space projection.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{KirasError, Result};
use crate::sim::observe::ObservationBundle;
use crate::sim::robot::{foot_in_hip, leg_ik, rotate, rotate_inverse, Leg, RobotState, NUM_JOINTS};

/// A single target pose that defines a skill.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Keyframe {
    pub skill_index: usize,
    pub name: String,
    pub joint_pos: [f64; NUM_JOINTS],
    pub base_height: f64,
    pub pitch: f64,
}

impl Keyframe {
    /// Robot resting in this pose at `x = 0` above flat ground.
    pub fn robot_state(&self) -> RobotState {
        RobotState {
            base_z: self.base_height,
            pitch: self.pitch,
            joint_pos: self.joint_pos,
            ..Default::default()
        }
    }

    /// Largest foot height above the ground plane for this pose.
    pub fn foot_residual(&self) -> f64 {
        let s = self.robot_state();
        Leg::ALL
            .iter()
            .map(|&l| s.foot_world(l)[1].abs())
            .fold(0.0, f64::max)
    }
}

/// Imitation-space frame: pitch, skill one-hot, joint positions, base height.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImitationFrame {
    pub pitch: f64,
    pub skill_onehot: Vec<f64>,
    pub joint_pos: [f64; NUM_JOINTS],
    pub base_height: f64,
}

impl ImitationFrame {
    pub fn dim(num_skills: usize) -> usize {
        num_skills + NUM_JOINTS + 2
    }

    /// Index of the first one-hot entry in [`ImitationFrame::to_vec`].
    pub const ONEHOT_OFFSET: usize = 1;

    pub fn from_keyframe(k: &Keyframe, num_skills: usize) -> Self {
        Self {
            pitch: k.pitch,
            skill_onehot: onehot(k.skill_index, num_skills),
            joint_pos: k.joint_pos,
            base_height: k.base_height,
        }
    }

    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(Self::dim(self.skill_onehot.len()));
        self.write_into(&mut v);
        v
    }

    pub fn write_into(&self, out: &mut Vec<f64>) {
        out.push(self.pitch);
        out.extend_from_slice(&self.skill_onehot);
        out.extend_from_slice(&self.joint_pos);
        out.push(self.base_height);
    }
}

pub fn onehot(index: usize, n: usize) -> Vec<f64> {
    let mut v = vec![0.0; n];
    if index < n {
        v[index] = 1.0;
    }
    v
}

/// Joint angles that put both feet on flat ground directly below the hips
/// for the requested base height and pitch.
pub fn keyframe_from_posture(skill_index: usize, name: &str, base_height: f64, pitch: f64) -> Result<Keyframe> {
    if !(base_height.is_finite() && pitch.is_finite()) || base_height <= 0.0 {
        return Err(KirasError::OutOfWorkspace(format!(
            "base height {base_height} / pitch {pitch} not a valid posture"
        )));
    }
    let mut joint_pos = [0.0; NUM_JOINTS];
    for leg in Leg::ALL {
        let hip = leg.hip_body();
        let hip_world = rotate(pitch, hip);
        let hip_world = [hip_world[0], base_height + hip_world[1]];
        // Foot below the hip on the ground, back into the body frame.
        let rel = rotate_inverse(pitch, [hip_world[0], -base_height]);
        let foot = [rel[0] - hip[0], rel[1] - hip[1]];
        let (qh, qk) = leg_ik(foot).map_err(|e| {
            KirasError::OutOfWorkspace(format!("{name}: {leg:?} leg at hip height {:.3} m: {e}", hip_world[1]))
        })?;
        let o = leg.joint_offset();
        joint_pos[o] = qh;
        joint_pos[o + 1] = qk;
    }
    Ok(Keyframe {
        skill_index,
        name: name.to_string(),
        joint_pos,
        base_height,
        pitch,
    })
}

/// Pose implied by joint angles: the pitch that levels both feet and the
/// base height that puts them on the ground.
pub fn keyframe_from_joints(skill_index: usize, name: &str, joint_pos: [f64; NUM_JOINTS]) -> Result<Keyframe> {
    let foot_body = |leg: Leg| {
        let o = leg.joint_offset();
        let f = foot_in_hip(joint_pos[o], joint_pos[o + 1]);
        let h = leg.hip_body();
        [h[0] + f[0], h[1] + f[1]]
    };
    let a = foot_body(Leg::Front);
    let b = foot_body(Leg::Rear);
    if (a[0] - b[0]).abs() < 1e-6 {
        return Err(KirasError::OutOfWorkspace(format!("{name}: feet coincide along the body axis")));
    }
    let pitch = ((a[1] - b[1]) / (a[0] - b[0])).atan();
    let base_height = -rotate(pitch, a)[1];
    if base_height <= 0.0 {
        return Err(KirasError::OutOfWorkspace(format!(
            "{name}: joint angles put the base below the feet"
        )));
    }
    Ok(Keyframe {
        skill_index,
        name: name.to_string(),
        joint_pos,
        base_height,
        pitch,
    })
}

/// `T` copies of the keyframe's imitation frame.
pub fn keyframe_trajectory(k: &Keyframe, num_skills: usize, steps: usize) -> Result<Vec<ImitationFrame>> {
    if steps < 2 {
        return Err(KirasError::InvalidArgument(format!(
            "keyframe trajectory needs at least 2 steps, got {steps}"
        )));
    }
    Ok(vec![ImitationFrame::from_keyframe(k, num_skills); steps])
}

/// Projection of a full observation onto the imitation space.
pub fn phi(bundle: &ObservationBundle) -> ImitationFrame {
    bundle.imitation.clone()
}

/// Built-in skills as (name, base height m, pitch deg), pitch positive nose-down.
pub const BUILTIN_POSTURES: [(&str, f64, f64); 5] = [
    ("walk", 0.20, 0.0),
    ("crawl", 0.10, 0.0),
    ("stilt", 0.30, 0.0),
    ("pitch_up", 0.20, -15.0),
    ("pitch_down", 0.20, 15.0),
];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct KeyframeSet {
    pub keyframes: Vec<Keyframe>,
}

impl KeyframeSet {
    pub fn builtin() -> Self {
        let keyframes = BUILTIN_POSTURES
            .iter()
            .enumerate()
            .map(|(i, &(name, h, p))| keyframe_from_posture(i, name, h, p.to_radians()).expect("built-in posture reachable"))
            .collect();
        Self { keyframes }
    }

    pub fn len(&self) -> usize {
        self.keyframes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keyframes.is_empty()
    }

    pub fn get(&self, i: usize) -> &Keyframe {
        &self.keyframes[i]
    }

    pub fn index_of(&self, name: &str) -> Result<usize> {
        let norm = |s: &str| s.to_ascii_lowercase().replace('-', "_");
        self.keyframes
            .iter()
            .position(|k| norm(&k.name) == norm(name))
            .or_else(|| name.parse::<usize>().ok().filter(|&i| i < self.len()))
            .ok_or_else(|| KirasError::Unknown {
                kind: "skill",
                name: name.to_string(),
            })
    }

    /// Parses a keyframe file; indices follow file order starting at `first_index`.
    pub fn from_toml_str(text: &str, first_index: usize) -> Result<Self> {
        let file: KeyframeFile = toml::from_str(text)?;
        if file.skill.is_empty() {
            return Err(KirasError::Config("keyframe file lists no [[skill]] entries".into()));
        }
        let keyframes = file
            .skill
            .into_iter()
            .enumerate()
            .map(|(i, spec)| spec.build(first_index + i))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { keyframes })
    }

    pub fn load(path: &Path, first_index: usize) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, first_index)
    }
}

/// On-disk keyframe description. Either `joint_pos` or
/// `base_height` (+ optional `pitch_deg`) must be given.
#[derive(Clone, Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyframeSpec {
    name: String,
    base_height: Option<f64>,
    #[serde(default)]
    pitch_deg: f64,
    joint_pos: Option<[f64; NUM_JOINTS]>,
}

impl KeyframeSpec {
    fn build(self, index: usize) -> Result<Keyframe> {
        match (self.joint_pos, self.base_height) {
            (Some(q), None) => keyframe_from_joints(index, &self.name, q),
            (None, Some(h)) => keyframe_from_posture(index, &self.name, h, self.pitch_deg.to_radians()),
            _ => Err(KirasError::Config(format!(
                "skill '{}': give exactly one of joint_pos or base_height",
                self.name
            ))),
        }
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct KeyframeFile {
    #[serde(default)]
    skill: Vec<KeyframeSpec>,
}
