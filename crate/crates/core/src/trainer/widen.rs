//! Growing a trained policy by one skill.
//!
//! Every network that sees the skill one-hot gets a zero-initialized input
//! column at the new coordinate, so outputs for the existing skills are
//! unchanged until training resumes.

use std::path::Path;

use super::env::ResetSpec;
use super::{Trainer, VELOCITY_DIM};
use crate::error::{KirasError, Result};
use crate::keyframes::{keyframe_trajectory, ImitationFrame, Keyframe, KeyframeSet};
use crate::sim::{ObsLayout, TerrainType};

impl Trainer {
    /// Adds `keyframe` as skill index N and schedules a fresh skill-learning
    /// stage of `add_skill_t1` iterations followed by `add_skill_t2`
    /// iterations of terrain finetuning.
    pub fn add_skill(&mut self, keyframe: Keyframe) -> Result<()> {
        let n = self.num_skills();
        if keyframe.skill_index != n {
            return Err(KirasError::InvalidArgument(format!(
                "new skill must take index {n}, got {}",
                keyframe.skill_index
            )));
        }
        if self.keyframes.iter().any(|k| k.name == keyframe.name) {
            return Err(KirasError::InvalidArgument(format!("skill {:?} already exists", keyframe.name)));
        }
        if self.config.add_skill_t1 == 0 {
            return Err(KirasError::Config("add_skill_t1 must be positive".into()));
        }
        let col = ObsLayout::SKILL + n;
        let p_new = ObsLayout::new(n + 1).proprio_dim();
        let phi_new = ImitationFrame::dim(n + 1);
        let onehot_col = ImitationFrame::ONEHOT_OFFSET + n;

        self.policy.actor.net.insert_input_columns(&[col])?;
        self.critic_task.net.insert_input_columns(&[col])?;
        self.critic_imitation.net.insert_input_columns(&[col])?;
        let history_cols: Vec<usize> = (0..self.config.history).map(|k| k * p_new + col).collect();
        self.ece.encoder.net.insert_input_columns(&history_cols)?;
        self.ece.decoder.net.insert_input_columns(&[self.config.latent_dim + n])?;
        self.ece.decoder.net.insert_output_rows(&[col])?;
        self.ece.prior.net.insert_input_columns(&[n])?;
        self.ece.dims.num_skills = n + 1;
        self.ece.dims.proprio = p_new;
        self.discriminator.model.net.insert_input_columns(&[onehot_col, phi_new + onehot_col])?;
        self.actor_flat = None;

        self.policy.reset_optimizers();
        for net in [
            &mut self.critic_task,
            &mut self.critic_imitation,
            &mut self.ece.encoder,
            &mut self.ece.decoder,
            &mut self.ece.prior,
            &mut self.discriminator.model,
        ] {
            net.reset_optimizer();
        }

        let trajectory = keyframe_trajectory(&keyframe, n + 1, self.config.premium_horizon)?
            .iter()
            .map(|f| f.to_vec())
            .collect();
        self.state.premium.map_frames(|f| f.insert(onehot_col, 0.0));
        self.state.premium.push_skill(trajectory)?;
        self.state.normalizer.insert_dim(onehot_col);
        self.state.normalizer.unfreeze();
        self.state.sampler.push_skill();
        self.keyframes.push(keyframe);

        let t = self.state.iteration;
        self.state.stage_origin = t;
        self.state.t1 = t + self.config.add_skill_t1;
        self.state.t2 = self.state.t1 + self.config.add_skill_t2;
        self.state.stage2_started = false;
        self.state.reward_best = None;

        for e in 0..self.state.envs.len() {
            let skill = self.state.sampler.sample_skill(&mut self.state.rng);
            let spec = ResetSpec {
                skill,
                terrain: TerrainType::Flat,
                level: 0,
                keyframes: &self.keyframes,
                noise: &self.config.init_noise,
                randomization: &self.config.randomization,
                command_range: &self.config.command_range,
                default_joint_pos: &self.default_joint_pos,
                history: self.config.history,
            };
            self.state.envs[e].reset(&spec, &self.bank)?;
        }
        debug_assert_eq!(self.ece.dims.velocity, VELOCITY_DIM);
        if self.network_dims() != self.expected_dims()? {
            return Err(KirasError::InvalidArgument("widened networks do not match the new skill count".into()));
        }
        Ok(())
    }

    /// Loads a keyframe file holding exactly one new skill and adds it.
    pub fn add_skill_from_file(&mut self, path: &Path) -> Result<()> {
        let mut set = KeyframeSet::load(path, self.num_skills())?;
        if set.len() != 1 {
            return Err(KirasError::InvalidArgument(format!(
                "keyframe file must define exactly one new skill, found {}",
                set.len()
            )));
        }
        self.add_skill(set.keyframes.remove(0))
    }
}
