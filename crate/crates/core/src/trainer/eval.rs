use std::io::Write;
use std::path::Path;

use ndarray::{Array1, Array2};
use serde::{Deserialize, Serialize};

use super::env::{EnvSlot, ResetSpec};
use super::Trainer;
use crate::error::{KirasError, Result};
use crate::imitation::{dtw_distance, sil_reward_from_score};
use crate::keyframes::{keyframe_trajectory, ImitationFrame};
use crate::rewards::{compute_rewards, residual_reward, RewardBreakdown, StepSignals};
use crate::sim::curriculum::PROMOTE_RATIO;
use crate::sim::randomization::{Command, RandomizationRanges, Range};
use crate::sim::robot::NUM_JOINTS;
use crate::sim::observe::base_height;
use crate::sim::{step, TerrainType, TraversalMetrics};
use crate::skills::InitNoise;

/// Steps discarded at the start of each evaluation episode so the posture
/// statistics describe the settled skill rather than the transition into it.
pub const EVAL_WARMUP_STEPS: usize = 50;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub skill: String,
    pub terrain: TerrainType,
    pub level: u8,
    pub episodes: usize,
    pub command_vx: f64,
    pub mean_base_height: f64,
    pub mean_pitch_deg: f64,
    pub target_base_height: f64,
    pub target_pitch_deg: f64,
    pub dtw: f64,
    pub cosine_similarity: f64,
    pub success_rate: f64,
    pub collisions: usize,
}

/// Mean over aligned steps of the cosine between trajectory and reference
/// frames.
pub fn cosine_similarity<A: AsRef<[f64]>, B: AsRef<[f64]>>(a: &[A], b: &[B]) -> Result<f64> {
    if a.len() != b.len() || a.is_empty() {
        return Err(KirasError::InvalidArgument(format!(
            "cosine similarity needs equal non-empty lengths, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    let mut total = 0.0;
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x.as_ref(), y.as_ref());
        if x.len() != y.len() {
            return Err(KirasError::DimensionMismatch {
                context: "cosine similarity frame",
                expected: x.len(),
                got: y.len(),
            });
        }
        let dot: f64 = x.iter().zip(y).map(|(p, q)| p * q).sum();
        let nx = x.iter().map(|v| v * v).sum::<f64>().sqrt();
        let ny = y.iter().map(|v| v * v).sum::<f64>().sqrt();
        total += if nx == 0.0 || ny == 0.0 { 0.0 } else { dot / (nx * ny) };
    }
    Ok(total / a.len() as f64)
}

/// What one deterministic control step produced.
pub struct StepView {
    pub rewards: RewardBreakdown,
    pub collision: bool,
    pub diverged: bool,
}

/// One line of a replay script.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScriptEntry {
    pub time: f64,
    pub skill: usize,
    pub target_vx: f64,
}

/// Parses `time skill target_vx` lines. Blank lines and `#` comments are
/// ignored. Times must be non-decreasing and the first entry must start at 0.
pub fn parse_script(text: &str, num_skills: usize) -> Result<Vec<ScriptEntry>> {
    let mut out: Vec<ScriptEntry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line_no = i + 1;
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| KirasError::Script { line: line_no, msg };
        let fields: Vec<&str> = line.split(|c: char| c.is_whitespace() || c == ',').filter(|f| !f.is_empty()).collect();
        if fields.len() != 3 {
            return Err(err(format!("expected 3 fields (time skill target_vx), found {}", fields.len())));
        }
        let time: f64 = fields[0].parse().map_err(|_| err(format!("bad time {:?}", fields[0])))?;
        let skill: usize = fields[1].parse().map_err(|_| err(format!("bad skill index {:?}", fields[1])))?;
        let target_vx: f64 = fields[2].parse().map_err(|_| err(format!("bad target_vx {:?}", fields[2])))?;
        if !time.is_finite() || time < 0.0 || !target_vx.is_finite() {
            return Err(err("time must be finite and non-negative, target_vx finite".into()));
        }
        if skill >= num_skills {
            return Err(err(format!("skill index {skill} out of range for {num_skills} skills")));
        }
        if out.last().is_some_and(|p| time < p.time) {
            return Err(err("times must be non-decreasing".into()));
        }
        if out.is_empty() && time != 0.0 {
            return Err(err("the first entry must start at time 0".into()));
        }
        out.push(ScriptEntry { time, skill, target_vx });
    }
    if out.is_empty() {
        return Err(KirasError::Script {
            line: 0,
            msg: "script has no entries".into(),
        });
    }
    Ok(out)
}

impl Trainer {
    /// Mean action of the current policy for one environment.
    pub fn mean_action(&self, env: &EnvSlot) -> Result<Vec<f64>> {
        let (p, h) = (env.obs.proprio.len(), env.obs.history.len());
        let proprio = Array2::from_shape_vec((1, p), env.obs.proprio.clone()).expect("shape");
        let history = Array2::from_shape_vec((1, h), env.obs.history.clone()).expect("shape");
        let (input, _) = self.actor_inputs(&proprio, &history)?;
        Ok(self.policy.mean_batch(input.view())?.row(0).to_vec())
    }

    /// Advances one environment by one control step with the given action,
    /// computing every reward channel the way training does.
    pub fn step_env(&self, env: &mut EnvSlot, action: &[f64]) -> Result<StepView> {
        let n = self.num_skills();
        let (clipped, targets) = self.joint_targets(action);
        let prev_joint_vel = env.sim.robot.joint_vel;
        let prev_action = env.prev_action;
        let prev_torques = env.prev_torques;
        let prev_frame = env.obs.imitation.to_vec();
        let t = self.state.iteration;
        let stage1 = t < self.state.t1;
        let r_res = match (&self.actor_flat, stage1) {
            (Some(flat), false) => {
                let mut input = env.obs.proprio.clone();
                let ctx = self.ece.infer_one(ndarray::ArrayView1::from(&env.obs.history))?;
                input.extend(ctx);
                let a_flat = flat.forward(Array1::from(input).view())?;
                residual_reward(action, &a_flat.to_vec(), t, self.state.t1, self.state.t2)
            }
            _ => 0.0,
        };
        let outcome = match step(&env.sim, &targets, env.terrain_map(self.terrain_bank()), &env.rand, &self.sim_params) {
            Ok(o) => o,
            Err(KirasError::SimulationDiverged { .. }) => {
                let mut rewards = RewardBreakdown::default();
                rewards.r_t = self.config.rewards.collision;
                rewards.r_c = self.config.reward_weights.termination * rewards.r_t;
                return Ok(StepView {
                    rewards,
                    collision: true,
                    diverged: true,
                });
            }
            Err(e) => return Err(e),
        };
        env.sim = outcome.state;
        env.prev_action = clipped;
        env.prev_torques = outcome.torques;
        env.steps += 1;
        env.refresh_obs(n, &self.default_joint_pos, self.terrain_bank())?;
        let r_si = if stage1 {
            let norm = &self.state.normalizer;
            let mut pair = norm.normalize(&prev_frame);
            pair.extend(norm.normalize(&env.obs.imitation.to_vec()));
            let w = pair.len();
            let x = Array2::from_shape_vec((1, w), pair).expect("shape");
            sil_reward_from_score(self.discriminator.scores(x.view())?[0])
        } else {
            0.0
        };
        let signals = StepSignals {
            state: &env.sim.robot,
            prev_joint_vel: &prev_joint_vel,
            action: &clipped,
            prev_action: &prev_action,
            command: &env.command,
            torques: &outcome.torques,
            prev_torques: &prev_torques,
            contacts: &outcome.contacts,
            stand_pose: &self.keyframes[env.skill].joint_pos,
            control_dt: self.sim_params.control_dt(),
        };
        let rewards = compute_rewards(
            &signals,
            outcome.collision,
            r_res,
            r_si,
            &self.config.rewards,
            &self.config.reward_weights,
        );
        Ok(StepView {
            rewards,
            collision: outcome.collision,
            diverged: false,
        })
    }

    fn eval_env(&self, seed: u64, skill: usize, terrain: TerrainType, level: u8, command_vx: f64) -> Result<EnvSlot> {
        let noise = InitNoise {
            cross_skill_prob: 0.0,
            ..self.config.init_noise
        };
        let randomization = RandomizationRanges::disabled();
        let command_range = Range::point(command_vx);
        let spec = ResetSpec {
            skill,
            terrain,
            level,
            keyframes: &self.keyframes,
            noise: &noise,
            randomization: &randomization,
            command_range: &command_range,
            default_joint_pos: &self.default_joint_pos,
            history: self.config.history,
        };
        EnvSlot::new(seed, &spec, self.terrain_bank())
    }

    /// Deterministic mean-action rollouts of one skill on one terrain.
    pub fn evaluate(&self, skill: &str, terrain: TerrainType, level: u8, episodes: usize) -> Result<EvalReport> {
        if episodes == 0 {
            return Err(KirasError::InvalidArgument("episodes must be positive".into()));
        }
        let index = self
            .keyframes
            .iter()
            .position(|k| k.name == skill)
            .or_else(|| skill.parse::<usize>().ok().filter(|&i| i < self.num_skills()))
            .ok_or_else(|| KirasError::Unknown {
                kind: "skill",
                name: skill.to_string(),
            })?;
        let kf = &self.keyframes[index];
        let n = self.num_skills();
        let steps = self.config.episode_steps;
        let command_vx = self.config.eval_command_vx;
        let reference = ImitationFrame::from_keyframe(kf, n).to_vec();
        let (mut height_sum, mut pitch_sum, mut samples) = (0.0, 0.0, 0usize);
        let (mut dtw_sum, mut cos_sum, mut scored) = (0.0, 0.0, 0usize);
        let (mut successes, mut collisions) = (0usize, 0usize);
        for ep in 0..episodes {
            let mut env = self.eval_env(ep as u64, index, terrain, level, command_vx)?;
            let mut frames = Vec::with_capacity(steps);
            let mut collided = false;
            for k in 0..steps {
                let action = self.mean_action(&env)?;
                let view = self.step_env(&mut env, &action)?;
                if view.collision {
                    collided = true;
                    break;
                }
                if k + 1 > EVAL_WARMUP_STEPS {
                    let map = env.terrain_map(self.terrain_bank());
                    height_sum += base_height(&env.sim.robot, map);
                    pitch_sum += env.sim.robot.pitch.to_degrees();
                    samples += 1;
                    frames.push(env.obs.imitation.to_vec());
                }
            }
            if collided {
                collisions += 1;
            }
            if !frames.is_empty() {
                let reference_traj = vec![reference.clone(); frames.len()];
                dtw_sum += dtw_distance(&frames, &reference_traj)?;
                cos_sum += cosine_similarity(&frames, &reference_traj)?;
                scored += 1;
            }
            let commanded = command_vx * env.steps as f64 * self.sim_params.control_dt();
            let progress = TraversalMetrics::from_distances(env.travelled(), commanded).progress_ratio;
            if !collided && progress >= PROMOTE_RATIO {
                successes += 1;
            }
        }
        let mean = |s: f64, c: usize| if c == 0 { f64::NAN } else { s / c as f64 };
        Ok(EvalReport {
            skill: kf.name.clone(),
            terrain,
            level,
            episodes,
            command_vx,
            mean_base_height: mean(height_sum, samples),
            mean_pitch_deg: mean(pitch_sum, samples),
            target_base_height: kf.base_height,
            target_pitch_deg: kf.pitch.to_degrees(),
            dtw: mean(dtw_sum, scored),
            cosine_similarity: mean(cos_sum, scored),
            success_rate: successes as f64 / episodes as f64,
            collisions,
        })
    }

    /// Runs one continuous flat-ground episode following a skill script and
    /// writes one CSV row per control step.
    pub fn replay<W: Write>(&self, script: &[ScriptEntry], out: W) -> Result<usize> {
        let first = script.first().ok_or_else(|| KirasError::Script {
            line: 0,
            msg: "script has no entries".into(),
        })?;
        let dt = self.sim_params.control_dt();
        let last = script.last().map_or(0.0, |e| e.time);
        let duration = (self.config.episode_steps as f64 * dt).max(last + 1.0);
        let total = (duration / dt).round() as usize;
        let mut env = self.eval_env(0, first.skill, TerrainType::Flat, 0, first.target_vx)?;
        let n = self.num_skills();
        let mut w = csv::Writer::from_writer(out);
        let mut header: Vec<String> = ["time", "skill", "target_vx", "base_height", "pitch"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        header.extend((0..NUM_JOINTS).map(|j| format!("joint_{j}")));
        header.push("collision".into());
        header.extend(RewardBreakdown::COLUMNS.iter().map(|c| c.to_string()));
        w.write_record(&header)?;
        let mut next = 1;
        let mut written = 0;
        for k in 0..total {
            let time = k as f64 * dt;
            while next < script.len() && script[next].time <= time + 1e-9 {
                let e = script[next];
                env.switch_skill(e.skill, Command { target_vx: e.target_vx }, n);
                next += 1;
            }
            let skill = env.skill;
            let target_vx = env.command.target_vx;
            let action = self.mean_action(&env)?;
            let view = self.step_env(&mut env, &action)?;
            let map = env.terrain_map(self.terrain_bank());
            let mut row = vec![
                time.to_string(),
                skill.to_string(),
                target_vx.to_string(),
                base_height(&env.sim.robot, map).to_string(),
                env.sim.robot.pitch.to_string(),
            ];
            row.extend(env.sim.robot.joint_pos.iter().map(|q| q.to_string()));
            row.push(u8::from(view.collision).to_string());
            row.extend(view.rewards.values().iter().map(|v| v.to_string()));
            w.write_record(&row)?;
            written += 1;
            if view.diverged {
                break;
            }
        }
        w.flush()?;
        Ok(written)
    }

    pub fn replay_to_file(&self, script: &[ScriptEntry], path: &Path) -> Result<usize> {
        self.replay(script, std::fs::File::create(path)?)
    }
}

/// Keyframe trajectory of a skill compared against itself, the reference
/// point for the similarity metrics.
pub fn self_similarity(trainer: &Trainer, skill: usize, steps: usize) -> Result<(f64, f64)> {
    let traj: Vec<Vec<f64>> = keyframe_trajectory(&trainer.keyframes[skill], trainer.num_skills(), steps)?
        .iter()
        .map(|f| f.to_vec())
        .collect();
    Ok((dtw_distance(&traj, &traj)?, cosine_similarity(&traj, &traj)?))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::trainer::tests::tiny_config;

    #[test]
    fn keyframe_against_itself() {
        let tr = Trainer::new(tiny_config()).unwrap();
        for s in 0..tr.num_skills() {
            let (dtw, cos) = self_similarity(&tr, s, 30).unwrap();
            assert_eq!(dtw, 0.0);
            assert!((cos - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn cosine_basics() {
        assert!((cosine_similarity(&[[1.0, 0.0]], &[[0.0, 2.0]]).unwrap()).abs() < 1e-15);
        assert!((cosine_similarity(&[[1.0, 1.0]], &[[-2.0, -2.0]]).unwrap() + 1.0).abs() < 1e-12);
        assert!(cosine_similarity(&[[1.0]], &[[1.0], [1.0]]).is_err());
    }

    #[test]
    fn script_parsing() {
        let s = parse_script("# demo\n0 0 0.5\n3.0 1 0.0  # crawl\n\n", 5).unwrap();
        assert_eq!(s.len(), 2);
        assert_eq!(s[1], ScriptEntry { time: 3.0, skill: 1, target_vx: 0.0 });
        for (text, line) in [("0 0 0\n1 x 0", 2), ("0 0\n", 1), ("0 9 0", 1), ("1 0 0", 1), ("0 0 0\n2 0 0\n1 0 0", 3)] {
            match parse_script(text, 5) {
                Err(KirasError::Script { line: l, .. }) => assert_eq!(l, line, "{text}"),
                other => panic!("{text}: {other:?}"),
            }
        }
    }

    #[test]
    fn replay_switches_on_the_scripted_row() {
        let tr = Trainer::new(tiny_config()).unwrap();
        let script = parse_script("0 0 0.3\n0.5 1 0.0\n", 5).unwrap();
        let mut a = Vec::new();
        let rows = tr.replay(&script, &mut a).unwrap();
        let mut b = Vec::new();
        tr.replay(&script, &mut b).unwrap();
        assert_eq!(a, b);
        let text = String::from_utf8(a).unwrap();
        let body: Vec<Vec<String>> = text.lines().skip(1).map(|l| l.split(',').map(String::from).collect()).collect();
        assert_eq!(body.len(), rows);
        for r in &body {
            let t: f64 = r[0].parse().unwrap();
            let expected = if t + 1e-9 >= 0.5 { "1" } else { "0" };
            assert_eq!(r[1], expected, "row at t = {t}");
        }
    }

    #[test]
    fn untrained_policy_smoke_eval() {
        let tr = Trainer::new(tiny_config()).unwrap();
        let r = tr.evaluate("walk", TerrainType::Stairs, 9, 1).unwrap();
        assert!((0.0..=1.0).contains(&r.success_rate));
        assert!(tr.evaluate("moonwalk", TerrainType::Flat, 0, 1).is_err());
    }
}
