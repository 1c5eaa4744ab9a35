use std::collections::VecDeque;
use std::io::Write;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KirasError, Result};

pub const DEFAULT_PREMIUM_CAPACITY: usize = 8;

/// A trajectory of flattened imitation frames.
pub type FrameSeq = Vec<Vec<f64>>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillBuffer {
    keyframe: FrameSeq,
    premium: VecDeque<FrameSeq>,
    /// `None` stands for a best score of minus infinity.
    best_score: Option<f64>,
}

impl SkillBuffer {
    pub fn keyframe(&self) -> &FrameSeq {
        &self.keyframe
    }

    pub fn premium(&self) -> impl Iterator<Item = &FrameSeq> {
        self.premium.iter()
    }

    pub fn premium_len(&self) -> usize {
        self.premium.len()
    }

    pub fn best_score(&self) -> f64 {
        self.best_score.unwrap_or(f64::NEG_INFINITY)
    }

    /// Keyframe trajectory first, then premium entries oldest first.
    pub fn all(&self) -> impl Iterator<Item = &FrameSeq> {
        std::iter::once(&self.keyframe).chain(self.premium.iter())
    }

    fn trajectory(&self, i: usize) -> &FrameSeq {
        if i == 0 {
            &self.keyframe
        } else {
            &self.premium[i - 1]
        }
    }
}

/// Per-skill store of the best policy trajectories plus the keyframe
/// trajectory, which is never evicted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PremiumBuffer {
    capacity: usize,
    horizon: usize,
    skills: Vec<SkillBuffer>,
}

impl PremiumBuffer {
    pub fn new(keyframe_trajectories: Vec<FrameSeq>, capacity: usize) -> Result<Self> {
        let horizon = keyframe_trajectories.first().map_or(0, |t| t.len());
        if horizon < 2 || keyframe_trajectories.iter().any(|t| t.len() != horizon) {
            return Err(KirasError::InvalidArgument(
                "keyframe trajectories must share a length of at least 2".into(),
            ));
        }
        if capacity == 0 {
            return Err(KirasError::InvalidArgument("premium capacity must be positive".into()));
        }
        let skills = keyframe_trajectories
            .into_iter()
            .map(|keyframe| SkillBuffer {
                keyframe,
                premium: VecDeque::with_capacity(capacity),
                best_score: None,
            })
            .collect();
        Ok(Self {
            capacity,
            horizon,
            skills,
        })
    }

    pub fn num_skills(&self) -> usize {
        self.skills.len()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn skill(&self, i: usize) -> &SkillBuffer {
        &self.skills[i]
    }

    pub fn epsilon(&self, i: usize) -> f64 {
        self.skills[i].best_score()
    }

    /// Stores `trajectory` when `score` strictly exceeds the skill's best score.
    pub fn maybe_admit(&mut self, skill: usize, trajectory: FrameSeq, score: f64) -> Result<bool> {
        if trajectory.len() != self.horizon {
            return Err(KirasError::DimensionMismatch {
                context: "premium trajectory length",
                expected: self.horizon,
                got: trajectory.len(),
            });
        }
        let capacity = self.capacity;
        let s = self
            .skills
            .get_mut(skill)
            .ok_or_else(|| KirasError::InvalidArgument(format!("skill {skill} out of range")))?;
        if !(score > s.best_score()) {
            return Ok(false);
        }
        if s.premium.len() == capacity {
            s.premium.pop_front();
        }
        s.premium.push_back(trajectory);
        s.best_score = Some(score);
        Ok(true)
    }

    /// Uniformly picks a stored trajectory of `skill`, then a uniform
    /// consecutive frame pair inside it.
    pub fn sample_transition<R: Rng + ?Sized>(&self, skill: usize, rng: &mut R) -> (&[f64], &[f64]) {
        let s = &self.skills[skill];
        let traj = s.trajectory(rng.random_range(0..=s.premium.len()));
        let t = rng.random_range(1..traj.len());
        (&traj[t - 1], &traj[t])
    }

    /// Appends a skill whose buffer holds only its keyframe trajectory.
    pub fn push_skill(&mut self, keyframe: FrameSeq) -> Result<()> {
        if keyframe.len() != self.horizon {
            return Err(KirasError::DimensionMismatch {
                context: "keyframe trajectory length",
                expected: self.horizon,
                got: keyframe.len(),
            });
        }
        self.skills.push(SkillBuffer {
            keyframe,
            premium: VecDeque::with_capacity(self.capacity),
            best_score: None,
        });
        Ok(())
    }

    /// Applies `f` to every stored frame, including keyframe frames.
    pub fn map_frames(&mut self, mut f: impl FnMut(&mut Vec<f64>)) {
        for s in &mut self.skills {
            s.keyframe.iter_mut().for_each(&mut f);
            for t in &mut s.premium {
                t.iter_mut().for_each(&mut f);
            }
        }
    }

    /// One row per frame: trajectory id (0 = keyframe), step, frame values.
    pub fn write_csv<W: Write>(&self, skill: usize, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let s = &self.skills[skill];
        let dim = s.keyframe[0].len();
        let mut header = vec!["trajectory".to_string(), "step".to_string()];
        header.extend((0..dim).map(|k| format!("f{k}")));
        w.write_record(&header)?;
        for (id, traj) in s.all().enumerate() {
            for (t, frame) in traj.iter().enumerate() {
                let mut row = vec![id.to_string(), t.to_string()];
                row.extend(frame.iter().map(|v| v.to_string()));
                w.write_record(&row)?;
            }
        }
        w.flush()?;
        Ok(())
    }
}
