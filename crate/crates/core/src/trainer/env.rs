use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::keyframes::{onehot, Keyframe};
use crate::sim::randomization::{sample_command, sample_randomization, Command, DomainRandomization, RandomizationRanges, Range};
use crate::sim::robot::NUM_JOINTS;
use crate::sim::terrain::MAX_LEVEL;
use crate::sim::{generate_terrain, observe, ObsLayout, ObservationBundle, ProprioHistory, SimState, TerrainMap, TerrainType};
use crate::skills::{initialize_state, InitNoise};

/// Every terrain type at every level, generated once from the run seed.
#[derive(Clone, Debug)]
pub struct TerrainBank {
    maps: Vec<TerrainMap>,
}

impl TerrainBank {
    pub fn new(seed: u64) -> Result<Self> {
        let mut maps = Vec::with_capacity(TerrainType::ALL.len() * (MAX_LEVEL as usize + 1));
        for t in TerrainType::ALL {
            for level in 0..=MAX_LEVEL {
                let s = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ ((t.index() as u64) << 8 | level as u64);
                maps.push(generate_terrain(t, level, s)?);
            }
        }
        Ok(Self { maps })
    }

    pub fn get(&self, t: TerrainType, level: u8) -> &TerrainMap {
        &self.maps[t.index() * (MAX_LEVEL as usize + 1) + level.min(MAX_LEVEL) as usize]
    }
}

/// Episode-level settings drawn at reset.
pub struct ResetSpec<'a> {
    pub skill: usize,
    pub terrain: TerrainType,
    pub level: u8,
    pub keyframes: &'a [Keyframe],
    pub noise: &'a InitNoise,
    pub randomization: &'a RandomizationRanges,
    pub command_range: &'a Range,
    pub default_joint_pos: &'a [f64; NUM_JOINTS],
    pub history: usize,
}

/// One simulated environment and the bookkeeping of its current episode.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSlot {
    pub sim: SimState,
    pub rand: DomainRandomization,
    pub command: Command,
    pub skill: usize,
    pub pose_skill: usize,
    pub terrain: TerrainType,
    pub level: u8,
    pub history: ProprioHistory,
    pub obs: ObservationBundle,
    pub prev_action: [f64; NUM_JOINTS],
    pub prev_torques: [f64; NUM_JOINTS],
    pub steps: usize,
    pub start_x: f64,
    /// Raw imitation frames and combined rewards of the current premium chunk.
    pub chunk_frames: Vec<Vec<f64>>,
    pub chunk_rewards: Vec<f64>,
    pub rng: ChaCha8Rng,
}

impl EnvSlot {
    pub fn new(seed: u64, spec: &ResetSpec, bank: &TerrainBank) -> Result<Self> {
        let n = spec.keyframes.len();
        let placeholder = spec.keyframes[0].robot_state();
        let mut history = ProprioHistory::new(spec.history);
        let obs = observe(
            &placeholder,
            &Command::default(),
            &onehot(0, n),
            bank.get(TerrainType::Flat, 0),
            &[0.0; NUM_JOINTS],
            spec.default_joint_pos,
            &mut history,
        )?;
        let mut slot = Self {
            sim: SimState::new(placeholder),
            rand: DomainRandomization::nominal(),
            command: Command::default(),
            skill: 0,
            pose_skill: 0,
            terrain: TerrainType::Flat,
            level: 0,
            history,
            obs,
            prev_action: [0.0; NUM_JOINTS],
            prev_torques: [0.0; NUM_JOINTS],
            steps: 0,
            start_x: 0.0,
            chunk_frames: Vec::new(),
            chunk_rewards: Vec::new(),
            rng: ChaCha8Rng::seed_from_u64(seed),
        };
        slot.reset(spec, bank)?;
        Ok(slot)
    }

    pub fn terrain_map<'a>(&self, bank: &'a TerrainBank) -> &'a TerrainMap {
        bank.get(self.terrain, self.level)
    }

    pub fn reset(&mut self, spec: &ResetSpec, bank: &TerrainBank) -> Result<()> {
        self.skill = spec.skill;
        self.terrain = spec.terrain;
        self.level = spec.level;
        self.command = sample_command(spec.command_range, &mut self.rng);
        self.rand = sample_randomization(spec.randomization, &mut self.rng);
        let map = bank.get(spec.terrain, spec.level);
        let x0 = 0.0;
        let (robot, pose) = initialize_state(spec.skill, spec.keyframes, spec.noise, x0, map.height_at(x0), &mut self.rng);
        self.pose_skill = pose;
        self.sim = SimState::new(robot);
        self.prev_action = [0.0; NUM_JOINTS];
        self.prev_torques = [0.0; NUM_JOINTS];
        self.steps = 0;
        self.start_x = x0;
        self.chunk_frames.clear();
        self.chunk_rewards.clear();
        self.history.clear();
        self.refresh_obs(spec.keyframes.len(), spec.default_joint_pos, bank)
    }

    /// Observes the current state, pushing it into the history window.
    pub fn refresh_obs(&mut self, num_skills: usize, default_joint_pos: &[f64; NUM_JOINTS], bank: &TerrainBank) -> Result<()> {
        self.obs = observe(
            &self.sim.robot,
            &self.command,
            &onehot(self.skill, num_skills),
            bank.get(self.terrain, self.level),
            &self.prev_action,
            default_joint_pos,
            &mut self.history,
        )?;
        Ok(())
    }

    /// Changes the active skill and command in place, rewriting the current
    /// observation instead of taking a new one.
    pub fn switch_skill(&mut self, skill: usize, command: Command, num_skills: usize) {
        self.skill = skill;
        self.command = command;
        let hot = onehot(skill, num_skills);
        let patch = |v: &mut [f64]| {
            v[ObsLayout::COMMAND] = command.target_vx;
            v[ObsLayout::SKILL..ObsLayout::SKILL + num_skills].copy_from_slice(&hot);
        };
        patch(&mut self.obs.proprio);
        patch(&mut self.obs.privileged);
        if let Some(latest) = self.history.latest_mut() {
            patch(latest);
        }
        self.obs.history = self.history.flatten();
        self.obs.imitation.skill_onehot = hot;
    }

    /// Forward distance covered this episode.
    pub fn travelled(&self) -> f64 {
        self.sim.robot.base_x - self.start_x
    }
}
