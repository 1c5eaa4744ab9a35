//! Value-driven skill sampling at episode reset, the coverage check, and
//! keyframe-based state initialization.

use std::collections::VecDeque;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, KirasError, Result};
use crate::keyframes::Keyframe;
use crate::sim::robot::{RobotState, NUM_JOINTS};

pub const COVERAGE_WINDOW: usize = 200;
const VALUE_SHIFT_EPS: f64 = 1e-3;

/// Selection probabilities for already non-negative values:
/// `p_i = (1 - V_i / sum V) / (N - 1)`.
pub fn skill_probs_unshifted(values: &[f64]) -> Result<Vec<f64>> {
    let n = values.len();
    if n < 2 {
        return Err(KirasError::InvalidArgument(format!("skill sampling needs at least 2 skills, got {n}")));
    }
    let total: f64 = values.iter().sum();
    if !(total > 0.0) || !total.is_finite() {
        return Err(KirasError::InvalidArgument(format!("skill values must have a positive finite sum, got {total}")));
    }
    let scale = 1.0 / (n - 1) as f64;
    Ok(values.iter().map(|v| scale * (1.0 - v / total)).collect())
}

/// Shifts the critic values so the smallest becomes `1e-3`, then applies
/// the selection rule.
pub fn skill_probs(values: &[f64]) -> Result<Vec<f64>> {
    if values.iter().any(|v| !v.is_finite()) {
        return Err(KirasError::NonFinite("skill values".into()));
    }
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let shifted: Vec<f64> = values.iter().map(|v| v - min + VALUE_SHIFT_EPS).collect();
    skill_probs_unshifted(&shifted)
}

/// Inverse-CDF draw from a categorical distribution.
pub fn sample_categorical<R: Rng + ?Sized>(probs: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.iter().rposition(|&p| p > 0.0).unwrap_or(0)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkillSampler {
    num_skills: usize,
    window_len: usize,
    window: VecDeque<usize>,
    counts: Vec<u64>,
    probs: Vec<f64>,
}

impl SkillSampler {
    pub fn new(num_skills: usize) -> Result<Self> {
        Self::with_window(num_skills, COVERAGE_WINDOW)
    }

    pub fn with_window(num_skills: usize, window_len: usize) -> Result<Self> {
        if num_skills < 2 {
            return Err(KirasError::InvalidArgument("skill sampler needs at least 2 skills".into()));
        }
        if window_len == 0 {
            return Err(KirasError::InvalidArgument("coverage window must be positive".into()));
        }
        Ok(Self {
            num_skills,
            window_len,
            window: VecDeque::with_capacity(window_len),
            counts: vec![0; num_skills],
            probs: vec![1.0 / num_skills as f64; num_skills],
        })
    }

    pub fn num_skills(&self) -> usize {
        self.num_skills
    }

    /// Total assignments per skill since construction.
    pub fn counts(&self) -> &[u64] {
        &self.counts
    }

    /// Probabilities from the last call to [`SkillSampler::set_values`].
    pub fn probs(&self) -> &[f64] {
        &self.probs
    }

    pub fn window(&self) -> impl Iterator<Item = usize> + '_ {
        self.window.iter().copied()
    }

    /// Recomputes the selection probabilities from the task critic's
    /// values at each skill's reference state.
    pub fn set_values(&mut self, values: &[f64]) -> Result<()> {
        ensure_dim("skill values", self.num_skills, values.len())?;
        self.probs = skill_probs(values)?;
        Ok(())
    }

    /// Overrides the probabilities directly.
    pub fn set_probs(&mut self, probs: Vec<f64>) -> Result<()> {
        ensure_dim("skill probabilities", self.num_skills, probs.len())?;
        self.probs = probs;
        Ok(())
    }

    /// Substitutes a skill missing from a full window when the proposal is
    /// among the most frequent ones there.
    pub fn coverage_check(&self, proposed: usize) -> usize {
        if self.window.len() < self.window_len {
            return proposed;
        }
        let mut freq = vec![0usize; self.num_skills];
        for &s in &self.window {
            freq[s] += 1;
        }
        let Some(absent) = freq.iter().position(|&c| c == 0) else {
            return proposed;
        };
        let max = freq.iter().copied().max().unwrap_or(0);
        if freq[proposed] == max {
            absent
        } else {
            proposed
        }
    }

    fn record(&mut self, skill: usize) {
        if self.window.len() == self.window_len {
            self.window.pop_front();
        }
        self.window.push_back(skill);
        self.counts[skill] += 1;
    }

    /// Draws a skill for one reset, applies the coverage check and records
    /// the assignment.
    pub fn sample_skill<R: Rng + ?Sized>(&mut self, rng: &mut R) -> usize {
        let proposed = sample_categorical(&self.probs, rng);
        let skill = self.coverage_check(proposed);
        self.record(skill);
        skill
    }

    /// Adds an (initially absent) skill.
    pub fn push_skill(&mut self) {
        self.num_skills += 1;
        self.counts.push(0);
        self.probs = vec![1.0 / self.num_skills as f64; self.num_skills];
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitNoise {
    pub joint_rad: f64,
    pub height_m: f64,
    pub pitch_deg: f64,
    pub cross_skill_prob: f64,
}

impl Default for InitNoise {
    fn default() -> Self {
        Self {
            joint_rad: 0.05,
            height_m: 0.02,
            pitch_deg: 2.0,
            cross_skill_prob: 0.25,
        }
    }
}

impl InitNoise {
    pub fn none() -> Self {
        Self {
            joint_rad: 0.0,
            height_m: 0.0,
            pitch_deg: 0.0,
            cross_skill_prob: 0.0,
        }
    }
}

fn jitter<R: Rng + ?Sized>(half_width: f64, rng: &mut R) -> f64 {
    if half_width > 0.0 {
        rng.random_range(-half_width..=half_width)
    } else {
        0.0
    }
}

/// Initial robot state for an episode commanding `skill`. Returns the state
/// and the index of the keyframe the pose was taken from, which differs from
/// `skill` for cross-skill initializations. `ground` is the terrain height
/// under the base.
pub fn initialize_state<R: Rng + ?Sized>(
    skill: usize,
    keyframes: &[Keyframe],
    noise: &InitNoise,
    base_x: f64,
    ground: f64,
    rng: &mut R,
) -> (RobotState, usize) {
    let n = keyframes.len();
    let mut pose = skill;
    if n > 1 && noise.cross_skill_prob > 0.0 && rng.random::<f64>() < noise.cross_skill_prob {
        let k = rng.random_range(0..n - 1);
        pose = if k >= skill { k + 1 } else { k };
    }
    let kf = &keyframes[pose];
    let mut joint_pos = [0.0; NUM_JOINTS];
    for (q, k) in joint_pos.iter_mut().zip(&kf.joint_pos) {
        *q = k + jitter(noise.joint_rad, rng);
    }
    let state = RobotState {
        base_x,
        base_z: ground + kf.base_height + jitter(noise.height_m, rng),
        pitch: kf.pitch + jitter(noise.pitch_deg.to_radians(), rng),
        joint_pos,
        ..Default::default()
    };
    (state, pose)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::keyframes::KeyframeSet;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn worked_examples() {
        let p = skill_probs(&[0.7; 5]).unwrap();
        assert!(p.iter().all(|&x| (x - 0.2).abs() < 1e-15));
        let p = skill_probs_unshifted(&[1.0, 3.0]).unwrap();
        assert_eq!(p, vec![0.75, 0.25]);
        assert!(skill_probs(&[1.0]).is_err());
    }

    proptest! {
        #[test]
        fn probability_properties(values in prop::collection::vec(-50.0f64..50.0, 2..9), c in -10.0f64..10.0) {
            let p = skill_probs(&values).unwrap();
            let n = values.len() as f64;
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            prop_assert!(p.iter().all(|&x| (0.0..=1.0 / (n - 1.0) + 1e-15).contains(&x)));
            let shifted: Vec<f64> = values.iter().map(|v| v + c).collect();
            let q = skill_probs(&shifted).unwrap();
            for (a, b) in p.iter().zip(&q) {
                prop_assert!((a - b).abs() < 1e-9);
            }
            for i in 0..values.len() {
                for j in 0..values.len() {
                    if values[i] < values[j] {
                        prop_assert!(p[i] > p[j]);
                    }
                }
            }
        }
    }

    #[test]
    fn degenerate_distribution_is_deterministic() {
        let mut s = SkillSampler::new(5).unwrap();
        s.set_probs(vec![1.0, 0.0, 0.0, 0.0, 0.0]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        for _ in 0..COVERAGE_WINDOW {
            assert_eq!(s.sample_skill(&mut rng), 0);
        }
        // The window is now full of skill 0, so coverage kicks in.
        assert_eq!(s.sample_skill(&mut rng), 1);
    }

    #[test]
    fn seeded_sequences_repeat() {
        let run = || {
            let mut s = SkillSampler::new(4).unwrap();
            s.set_values(&[0.1, 2.0, -1.0, 0.5]).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(42);
            (0..500).map(|_| s.sample_skill(&mut rng)).collect::<Vec<_>>()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn categorical_frequencies() {
        let p = [0.5, 0.3, 0.2];
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let mut c = [0usize; 3];
        let n = 100_000;
        for _ in 0..n {
            c[sample_categorical(&p, &mut rng)] += 1;
        }
        for (k, &pk) in c.iter().zip(&p) {
            assert!((*k as f64 / n as f64 - pk).abs() < 0.01);
        }
    }

    #[test]
    fn coverage_rules() {
        let mut s = SkillSampler::new(4).unwrap();
        assert_eq!(s.coverage_check(2), 2);
        for i in 0..COVERAGE_WINDOW {
            s.record([0, 0, 1, 2][i % 4]);
        }
        assert_eq!(s.coverage_check(0), 3);
        assert_eq!(s.coverage_check(1), 1);
        s.record(3);
        assert_eq!(s.coverage_check(0), 0);
    }

    #[test]
    fn every_skill_appears_within_bound() {
        let mut s = SkillSampler::new(5).unwrap();
        s.set_probs(vec![0.97, 0.01, 0.01, 0.005, 0.005]).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let draws: Vec<usize> = (0..20_000).map(|_| s.sample_skill(&mut rng)).collect();
        let span = 2 * COVERAGE_WINDOW * 5;
        for w in draws.windows(span) {
            for k in 0..5 {
                assert!(w.contains(&k));
            }
        }
    }

    #[test]
    fn initialization_ranges() {
        let set = KeyframeSet::builtin();
        let (st, pose) = initialize_state(2, &set.keyframes, &InitNoise::none(), 0.0, 0.0, &mut ChaCha8Rng::seed_from_u64(0));
        assert_eq!(pose, 2);
        assert_eq!(st, set.get(2).robot_state());

        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let noise = InitNoise::default();
        let mut crossed = 0;
        for _ in 0..1000 {
            let (st, pose) = initialize_state(1, &set.keyframes, &noise, 0.0, 0.0, &mut rng);
            let kf = set.get(pose);
            for (q, k) in st.joint_pos.iter().zip(&kf.joint_pos) {
                assert!((q - k).abs() <= 0.05);
            }
            assert!((st.base_z - kf.base_height).abs() <= 0.02);
            assert!((st.pitch - kf.pitch).abs() <= 2f64.to_radians() + 1e-15);
            if pose != 1 {
                crossed += 1;
            }
        }
        assert!((180..320).contains(&crossed), "{crossed}");
    }
}
