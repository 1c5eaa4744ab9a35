//! Two-stage training orchestration: skill learning on flat ground with
//! self-imitation, then terrain finetuning anchored to the stage-1 policy.

pub mod checkpoint;
pub mod config;
pub mod env;
pub mod eval;
pub mod widen;

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::{Array1, Array2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::ece::{adaboot_gate, ece_loss_and_grads, EceBatch, EceDims, EceLoss, EceNets};
use crate::error::{KirasError, Result};
use crate::imitation::{
    discriminator_update, score_trajectory, sil_reward_from_score, Discriminator, PremiumBuffer, RunningNorm,
};
use crate::keyframes::{keyframe_trajectory, onehot, Keyframe, KeyframeSet};
use crate::numerics::{Activation, DenseNet, TrainableNet};
use crate::ppo::{gae, mix_advantages, omega_schedule, ppo_update, GaussianPolicy, PpoBatch, PpoLosses};
use crate::rewards::{compute_rewards, residual_reward, RewardBreakdown, StepSignals};
use crate::sim::randomization::Command;
use crate::sim::robot::NUM_JOINTS;
use crate::sim::{
    observe, step, update_curriculum, ObsLayout, ProprioHistory, SimParams, StepOutcome, TerrainType, TraversalMetrics,
};
use crate::skills::SkillSampler;

use checkpoint::{get_adam, get_net, get_trainable, put_adam, put_net, put_trainable, Checkpoint};
pub use config::{NetworkDims, ObservationSizes, Preset, TrainConfig};
use env::{EnvSlot, ResetSpec, TerrainBank};

/// Planar base velocity (vx, vz) estimated by the context encoder.
pub const VELOCITY_DIM: usize = 2;

/// Everything besides the networks that a checkpoint must carry.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainState {
    pub iteration: u64,
    /// Iteration the current skill-learning stage started at.
    pub stage_origin: u64,
    pub t1: u64,
    pub t2: u64,
    pub stage2_started: bool,
    pub premium: PremiumBuffer,
    pub normalizer: RunningNorm,
    pub sampler: SkillSampler,
    pub envs: Vec<EnvSlot>,
    pub rng: ChaCha8Rng,
    pub reward_best: Option<f64>,
}

pub struct Trainer {
    pub config: TrainConfig,
    pub keyframes: Vec<Keyframe>,
    pub default_joint_pos: [f64; NUM_JOINTS],
    pub policy: GaussianPolicy,
    pub critic_task: TrainableNet,
    pub critic_imitation: TrainableNet,
    pub ece: EceNets,
    pub discriminator: Discriminator,
    /// Frozen copy of the actor taken when terrain finetuning starts.
    pub actor_flat: Option<DenseNet>,
    pub state: TrainState,
    pub sim_params: SimParams,
    bank: TerrainBank,
}

/// One row of the metrics log.
#[derive(Clone, Debug, PartialEq)]
pub struct IterationMetrics {
    pub iteration: u64,
    pub stage: u8,
    pub omega_task: f64,
    pub omega_imitation: f64,
    pub rewards: RewardBreakdown,
    pub skill_probs: Vec<f64>,
    pub epsilon: Vec<f64>,
    pub premium_sizes: Vec<usize>,
    pub discriminator_loss: f64,
    pub ece: EceLoss,
    pub ece_update_prob: f64,
    pub ece_updated: bool,
    pub velocity_rmse: f64,
    pub ppo: PpoLosses,
    pub episodes: usize,
    pub collisions: usize,
    pub diverged: usize,
    pub admitted: usize,
    pub levels: Vec<f64>,
}

impl IterationMetrics {
    pub fn header(skill_names: &[String]) -> Vec<String> {
        let mut h: Vec<String> = ["iteration", "stage", "omega_task", "omega_imitation"]
            .iter()
            .map(|s| s.to_string())
            .collect();
        h.extend(RewardBreakdown::COLUMNS.iter().map(|c| format!("reward_{c}")));
        h.extend(skill_names.iter().map(|n| format!("prob_{n}")));
        h.extend(skill_names.iter().map(|n| format!("epsilon_{n}")));
        h.extend(skill_names.iter().map(|n| format!("premium_{n}")));
        for c in [
            "discriminator_loss",
            "ece_loss",
            "ece_velocity_mse",
            "ece_reconstruction_mse",
            "ece_kl",
            "ece_update_prob",
            "ece_updated",
            "velocity_rmse",
            "actor_loss",
            "value_task_loss",
            "value_imitation_loss",
            "entropy",
            "approx_kl",
            "clip_fraction",
            "episodes",
            "collisions",
            "diverged",
            "premium_admitted",
        ] {
            h.push(c.to_string());
        }
        h.extend(TerrainType::ALL.iter().map(|t| format!("level_{}", t.name())));
        h
    }

    pub fn row(&self) -> Vec<String> {
        let mut r = vec![
            self.iteration.to_string(),
            self.stage.to_string(),
            self.omega_task.to_string(),
            self.omega_imitation.to_string(),
        ];
        r.extend(self.rewards.values().iter().map(|v| v.to_string()));
        r.extend(self.skill_probs.iter().map(|v| v.to_string()));
        r.extend(self.epsilon.iter().map(|v| v.to_string()));
        r.extend(self.premium_sizes.iter().map(|v| v.to_string()));
        for v in [
            self.discriminator_loss,
            self.ece.total,
            self.ece.velocity_mse,
            self.ece.reconstruction_mse,
            self.ece.kl,
            self.ece_update_prob,
            if self.ece_updated { 1.0 } else { 0.0 },
            self.velocity_rmse,
            self.ppo.actor,
            self.ppo.value_task,
            self.ppo.value_imitation,
            self.ppo.entropy,
            self.ppo.approx_kl,
            self.ppo.clip_fraction,
        ] {
            r.push(v.to_string());
        }
        for v in [self.episodes, self.collisions, self.diverged, self.admitted] {
            r.push(v.to_string());
        }
        r.extend(self.levels.iter().map(|v| v.to_string()));
        r
    }
}

/// Transition data gathered during one rollout phase, time-major.
#[derive(Default)]
struct Rollout {
    actor_obs: Vec<f64>,
    critic_obs: Vec<f64>,
    actions: Vec<f64>,
    log_probs: Vec<f64>,
    r_task: Vec<f64>,
    r_imitation: Vec<f64>,
    dones: Vec<bool>,
    v_task: Vec<f64>,
    v_imitation: Vec<f64>,
    last_v_task: Vec<f64>,
    last_v_imitation: Vec<f64>,
    ece_history: Vec<f64>,
    ece_skill: Vec<f64>,
    ece_velocity: Vec<f64>,
    ece_next: Vec<f64>,
    ece_rows: usize,
    velocity_sq_err: f64,
    velocity_count: usize,
    fake_pairs: Vec<(usize, Vec<f64>, Vec<f64>)>,
    reward_sum: RewardBreakdown,
    task_reward_sum: f64,
    steps: usize,
    episodes: usize,
    collisions: usize,
    diverged: usize,
    admitted: usize,
}

/// Per-environment results of the physics phase of one control step.
struct StepRecord {
    outcome: Option<StepOutcome>,
    prev_joint_vel: [f64; NUM_JOINTS],
    prev_action: [f64; NUM_JOINTS],
    prev_torques: [f64; NUM_JOINTS],
    action: [f64; NUM_JOINTS],
    r_res: f64,
    prev_frame: Vec<f64>,
}

fn reset_spec<'a>(
    cfg: &'a TrainConfig,
    keyframes: &'a [Keyframe],
    default_joint_pos: &'a [f64; NUM_JOINTS],
    skill: usize,
    terrain: TerrainType,
    level: u8,
) -> ResetSpec<'a> {
    ResetSpec {
        skill,
        terrain,
        level,
        keyframes,
        noise: &cfg.init_noise,
        randomization: &cfg.randomization,
        command_range: &cfg.command_range,
        default_joint_pos,
        history: cfg.history,
    }
}

fn rows(flat: Vec<f64>, width: usize) -> Result<Array2<f64>> {
    let n = if width == 0 { 0 } else { flat.len() / width };
    Array2::from_shape_vec((n, width), flat).map_err(|e| KirasError::InvalidArgument(format!("row packing: {e}")))
}

fn critic_net<R: Rng + ?Sized>(input: usize, hidden: &[usize], rng: &mut R) -> Result<DenseNet> {
    let mut dims = vec![input];
    dims.extend_from_slice(hidden);
    dims.push(1);
    DenseNet::new(&dims, Activation::Elu, Activation::Linear, 1.0, rng)
}

pub fn load_keyframes(cfg: &TrainConfig) -> Result<Vec<Keyframe>> {
    let set = match cfg.keyframe_path() {
        Some(p) => KeyframeSet::load(&p, 0)?,
        None => KeyframeSet::builtin(),
    };
    if set.len() < 2 {
        return Err(KirasError::Config("at least two skills are required".into()));
    }
    Ok(set.keyframes)
}

impl Trainer {
    pub fn new(config: TrainConfig) -> Result<Self> {
        config.validate()?;
        let keyframes = load_keyframes(&config)?;
        let n = keyframes.len();
        let layout = ObsLayout::new(n);
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let adam = config.adam();
        let ece_dims = EceDims {
            history: config.history,
            proprio: layout.proprio_dim(),
            num_skills: n,
            velocity: VELOCITY_DIM,
            latent: config.latent_dim,
        };
        let policy = GaussianPolicy::new(
            layout.proprio_dim() + ece_dims.context(),
            &config.actor_hidden,
            NUM_JOINTS,
            adam,
            &mut rng,
        )?;
        let critic_task = TrainableNet::new(critic_net(layout.privileged_dim(), &config.critic_hidden, &mut rng)?, adam);
        let critic_imitation =
            TrainableNet::new(critic_net(layout.privileged_dim(), &config.critic_hidden, &mut rng)?, adam);
        let ece = EceNets::new(ece_dims, &config.encoder_hidden, &config.decoder_hidden, adam, &mut rng)?;
        let discriminator = Discriminator::new(layout.imitation_dim(), &config.discriminator_hidden, adam, &mut rng)?;
        let trajectories = keyframes
            .iter()
            .map(|k| {
                keyframe_trajectory(k, n, config.premium_horizon).map(|t| t.iter().map(|f| f.to_vec()).collect())
            })
            .collect::<Result<Vec<_>>>()?;
        let premium = PremiumBuffer::new(trajectories, config.premium_capacity)?;
        let mut sampler = SkillSampler::new(n)?;
        let bank = TerrainBank::new(config.seed)?;
        let default_joint_pos = keyframes[0].joint_pos;
        let mut envs = Vec::with_capacity(config.num_envs);
        for _ in 0..config.num_envs {
            let seed = rng.random::<u64>();
            let skill = sampler.sample_skill(&mut rng);
            let spec = reset_spec(&config, &keyframes, &default_joint_pos, skill, TerrainType::Flat, 0);
            envs.push(EnvSlot::new(seed, &spec, &bank)?);
        }
        let state = TrainState {
            iteration: 0,
            stage_origin: 0,
            t1: config.t1,
            t2: config.t2,
            stage2_started: false,
            premium,
            normalizer: RunningNorm::new(layout.imitation_dim()),
            sampler,
            envs,
            rng,
            reward_best: None,
        };
        Ok(Self {
            config,
            keyframes,
            default_joint_pos,
            policy,
            critic_task,
            critic_imitation,
            ece,
            discriminator,
            actor_flat: None,
            state,
            sim_params: SimParams::default(),
            bank,
        })
    }

    pub fn num_skills(&self) -> usize {
        self.keyframes.len()
    }

    pub fn layout(&self) -> ObsLayout {
        ObsLayout::new(self.num_skills())
    }

    pub fn skill_names(&self) -> Vec<String> {
        self.keyframes.iter().map(|k| k.name.clone()).collect()
    }

    pub fn terrain_bank(&self) -> &TerrainBank {
        &self.bank
    }

    pub fn network_dims(&self) -> NetworkDims {
        NetworkDims {
            actor_in: self.policy.actor.net.input_dim(),
            actor_out: self.policy.actor.net.output_dim(),
            critic_in: self.critic_task.net.input_dim(),
            encoder_in: self.ece.encoder.net.input_dim(),
            encoder_out: self.ece.encoder.net.output_dim(),
            decoder_in: self.ece.decoder.net.input_dim(),
            decoder_out: self.ece.decoder.net.output_dim(),
            discriminator_in: self.discriminator.model.net.input_dim(),
        }
    }

    /// Widths the networks must have for the current skill count.
    pub fn expected_dims(&self) -> Result<NetworkDims> {
        let l = self.layout();
        NetworkDims::derive(&ObservationSizes {
            proprio: l.proprio_dim(),
            privileged: l.privileged_dim(),
            imitation: l.imitation_dim(),
            velocity: VELOCITY_DIM,
            latent: self.config.latent_dim,
            history: self.config.history,
            num_skills: self.num_skills(),
            actions: NUM_JOINTS,
        })
    }

    pub fn is_finished(&self) -> bool {
        self.state.iteration >= self.state.t2
    }

    /// Joint targets for an action after clipping.
    pub fn joint_targets(&self, action: &[f64]) -> ([f64; NUM_JOINTS], [f64; NUM_JOINTS]) {
        let mut clipped = [0.0; NUM_JOINTS];
        let mut targets = [0.0; NUM_JOINTS];
        for j in 0..NUM_JOINTS {
            clipped[j] = action[j].clamp(-self.config.action_clip, self.config.action_clip);
            targets[j] = self.default_joint_pos[j] + self.config.action_scale * clipped[j];
        }
        (clipped, targets)
    }

    /// Actor inputs `[proprio, v_hat, z_mean]` for a batch of observation
    /// windows; the context is computed by the encoder at its posterior mean.
    pub fn actor_inputs(&self, proprio: &Array2<f64>, history: &Array2<f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        let ctx = self.ece.infer(history.view())?;
        let input = ndarray::concatenate![Axis(1), proprio.view(), ctx.v_hat.view(), ctx.z_lat.view()];
        Ok((input, ctx.v_hat))
    }

    /// Task-critic values of each skill's keyframe state.
    pub fn reference_values(&self) -> Result<Vec<f64>> {
        let n = self.num_skills();
        let flat = self.bank.get(TerrainType::Flat, 0);
        let mut data = Vec::new();
        for (i, k) in self.keyframes.iter().enumerate() {
            let mut h = ProprioHistory::new(self.config.history);
            let b = observe(
                &k.robot_state(),
                &Command::default(),
                &onehot(i, n),
                flat,
                &[0.0; NUM_JOINTS],
                &self.default_joint_pos,
                &mut h,
            )?;
            data.extend(b.privileged);
        }
        let x = rows(data, self.layout().privileged_dim())?;
        Ok(self.critic_task.net.forward_batch(x.view())?.column(0).to_vec())
    }

    fn begin_stage2(&mut self) -> Result<()> {
        self.actor_flat = Some(self.policy.actor.net.clone());
        self.state.normalizer.freeze();
        self.state.stage2_started = true;
        let mix = self.config.terrain_mix.clone();
        for (i, env) in self.state.envs.iter_mut().enumerate() {
            env.level = self.config.initial_level;
            let skill = self.state.sampler.sample_skill(&mut self.state.rng);
            let spec = reset_spec(
                &self.config,
                &self.keyframes,
                &self.default_joint_pos,
                skill,
                mix[i % mix.len()],
                env.level,
            );
            env.reset(&spec, &self.bank)?;
        }
        Ok(())
    }

    fn rollout(&mut self, stage1: bool) -> Result<Rollout> {
        let t = self.state.iteration;
        let n = self.state.envs.len();
        let layout = self.layout();
        let (p_dim, c_dim) = (layout.proprio_dim(), layout.privileged_dim());
        let h_dim = self.ece.dims.encoder_in();
        let n_skills = self.num_skills();
        let control_dt = self.sim_params.control_dt();
        let gamma = self.config.gamma;
        let mut ro = Rollout::default();

        for _ in 0..self.config.horizon {
            let mut proprio = Vec::with_capacity(n * p_dim);
            let mut privileged = Vec::with_capacity(n * c_dim);
            let mut history = Vec::with_capacity(n * h_dim);
            for env in &self.state.envs {
                proprio.extend_from_slice(&env.obs.proprio);
                privileged.extend_from_slice(&env.obs.privileged);
                history.extend_from_slice(&env.obs.history);
            }
            let proprio = rows(proprio, p_dim)?;
            let privileged = rows(privileged, c_dim)?;
            let history = rows(history, h_dim)?;
            let (actor_in, v_hat) = self.actor_inputs(&proprio, &history)?;
            let means = self.policy.mean_batch(actor_in.view())?;
            let v_task = self.critic_task.net.forward_batch(privileged.view())?;
            let v_imit = self.critic_imitation.net.forward_batch(privileged.view())?;
            let flat_means = match (&self.actor_flat, stage1) {
                (Some(f), false) => Some(f.forward_batch(actor_in.view())?),
                _ => None,
            };

            let mut records = Vec::with_capacity(n);
            let mut all_targets = Vec::with_capacity(n);
            for e in 0..n {
                let (action, lp) = {
                    let env = &mut self.state.envs[e];
                    self.policy.sample(means.row(e), &mut env.rng)
                };
                let (clipped, targets) = self.joint_targets(&action);
                let r_res = match &flat_means {
                    Some(f) => residual_reward(&action, &f.row(e).to_vec(), t, self.state.t1, self.state.t2),
                    None => 0.0,
                };
                let env = &self.state.envs[e];
                let vt = [env.sim.robot.base_vx, env.sim.robot.base_vz];
                for (a, b) in vt.iter().zip(v_hat.row(e)) {
                    ro.velocity_sq_err += (a - b) * (a - b);
                }
                ro.velocity_count += VELOCITY_DIM;
                ro.ece_history.extend(history.row(e));
                ro.ece_skill.extend(onehot(env.skill, n_skills));
                ro.ece_velocity.extend(vt);
                ro.actor_obs.extend(actor_in.row(e));
                ro.critic_obs.extend(privileged.row(e));
                ro.actions.extend_from_slice(&action);
                ro.log_probs.push(lp);
                ro.v_task.push(v_task[[e, 0]]);
                ro.v_imitation.push(v_imit[[e, 0]]);
                records.push(StepRecord {
                    outcome: None,
                    prev_joint_vel: env.sim.robot.joint_vel,
                    prev_action: env.prev_action,
                    prev_torques: env.prev_torques,
                    action: clipped,
                    r_res,
                    prev_frame: env.obs.imitation.to_vec(),
                });
                all_targets.push(targets);
            }

            let params = self.sim_params;
            let bank = &self.bank;
            let outcomes: Vec<Result<StepOutcome>> = self
                .state
                .envs
                .par_iter()
                .zip(all_targets.par_iter())
                .map(|(env, tg)| step(&env.sim, tg, env.terrain_map(bank), &env.rand, &params))
                .collect();

            let mut cur_frames = Vec::with_capacity(n);
            for (e, out) in outcomes.into_iter().enumerate() {
                let env = &mut self.state.envs[e];
                match out {
                    Ok(o) => {
                        env.sim = o.state;
                        env.prev_action = records[e].action;
                        env.prev_torques = o.torques;
                        records[e].outcome = Some(o);
                    }
                    Err(KirasError::SimulationDiverged { .. }) => {}
                    Err(other) => return Err(other),
                }
                env.steps += 1;
                env.refresh_obs(n_skills, &self.default_joint_pos, &self.bank)?;
                let frame = env.obs.imitation.to_vec();
                if stage1 && !self.state.normalizer.is_frozen() {
                    self.state.normalizer.update(&frame)?;
                }
                cur_frames.push(frame);
            }

            let sil: Vec<f64> = if stage1 {
                let mut pairs = Vec::with_capacity(n * 2 * cur_frames[0].len());
                for (r, cur) in records.iter().zip(&cur_frames) {
                    pairs.extend(self.state.normalizer.normalize(&r.prev_frame));
                    pairs.extend(self.state.normalizer.normalize(cur));
                }
                let pairs = rows(pairs, 2 * cur_frames[0].len())?;
                self.discriminator.scores(pairs.view())?.iter().map(|&s| sil_reward_from_score(s)).collect()
            } else {
                vec![0.0; n]
            };

            for e in 0..n {
                let rec = &records[e];
                let env_skill = self.state.envs[e].skill;
                let (breakdown, collision) = match &rec.outcome {
                    Some(o) => {
                        let env = &self.state.envs[e];
                        let signals = StepSignals {
                            state: &env.sim.robot,
                            prev_joint_vel: &rec.prev_joint_vel,
                            action: &rec.action,
                            prev_action: &rec.prev_action,
                            command: &env.command,
                            torques: &o.torques,
                            prev_torques: &rec.prev_torques,
                            contacts: &o.contacts,
                            stand_pose: &self.keyframes[env_skill].joint_pos,
                            control_dt,
                        };
                        let b = compute_rewards(
                            &signals,
                            o.collision,
                            rec.r_res,
                            sil[e],
                            &self.config.rewards,
                            &self.config.reward_weights,
                        );
                        (b, o.collision)
                    }
                    None => {
                        ro.diverged += 1;
                        let mut b = RewardBreakdown::default();
                        b.r_t = self.config.rewards.collision;
                        b.r_c = self.config.reward_weights.termination * b.r_t;
                        (b, true)
                    }
                };
                ro.reward_sum.accumulate(&breakdown);
                ro.task_reward_sum += breakdown.r_c;
                ro.steps += 1;
                let mut r_task = breakdown.r_c;
                let mut r_imit = breakdown.r_si;
                if rec.outcome.is_some() {
                    ro.ece_next.extend_from_slice(&self.state.envs[e].obs.proprio);
                } else {
                    ro.ece_next.extend(std::iter::repeat_n(f64::NAN, p_dim));
                }
                ro.ece_rows += 1;
                if stage1 {
                    ro.fake_pairs.push((env_skill, rec.prev_frame.clone(), cur_frames[e].clone()));
                }

                let timeout = self.state.envs[e].steps >= self.config.episode_steps;
                let done = collision || timeout;
                if timeout && !collision {
                    let x = Array1::from(self.state.envs[e].obs.privileged.clone());
                    r_task += gamma * self.critic_task.net.forward(x.view())?[0];
                    r_imit += gamma * self.critic_imitation.net.forward(x.view())?[0];
                }
                ro.r_task.push(r_task);
                ro.r_imitation.push(r_imit);
                ro.dones.push(done);

                {
                    let env = &mut self.state.envs[e];
                    env.chunk_frames.push(cur_frames[e].clone());
                    env.chunk_rewards.push(breakdown.r_c);
                }
                if self.state.envs[e].chunk_frames.len() == self.config.premium_horizon {
                    let env = &mut self.state.envs[e];
                    let frames = std::mem::take(&mut env.chunk_frames);
                    let rewards = std::mem::take(&mut env.chunk_rewards);
                    if stage1 {
                        let norm = &self.state.normalizer;
                        let kf = norm.normalize_seq(self.state.premium.skill(env_skill).keyframe());
                        let score = score_trajectory(&norm.normalize_seq(&frames), &kf, &rewards, self.config.score())?;
                        if self.state.premium.maybe_admit(env_skill, frames, score)? {
                            ro.admitted += 1;
                        }
                    }
                }

                if done {
                    ro.episodes += 1;
                    if collision {
                        ro.collisions += 1;
                    }
                    self.reset_env(e, stage1)?;
                }
            }
        }

        let mut privileged = Vec::with_capacity(n * c_dim);
        for env in &self.state.envs {
            privileged.extend_from_slice(&env.obs.privileged);
        }
        let privileged = rows(privileged, c_dim)?;
        ro.last_v_task = self.critic_task.net.forward_batch(privileged.view())?.column(0).to_vec();
        ro.last_v_imitation = self.critic_imitation.net.forward_batch(privileged.view())?.column(0).to_vec();
        Ok(ro)
    }

    fn reset_env(&mut self, e: usize, stage1: bool) -> Result<()> {
        let (terrain, level) = if stage1 {
            (TerrainType::Flat, 0)
        } else {
            let env = &self.state.envs[e];
            let commanded = env.command.target_vx * env.steps as f64 * self.sim_params.control_dt();
            let metrics = TraversalMetrics::from_distances(env.travelled(), commanded);
            let mix = &self.config.terrain_mix;
            (mix[e % mix.len()], update_curriculum(env.level, &metrics))
        };
        let skill = self.state.sampler.sample_skill(&mut self.state.rng);
        let spec = reset_spec(&self.config, &self.keyframes, &self.default_joint_pos, skill, terrain, level);
        self.state.envs[e].reset(&spec, &self.bank)
    }

    fn discriminator_step(&mut self, fake_pairs: &[(usize, Vec<f64>, Vec<f64>)]) -> Result<f64> {
        if fake_pairs.is_empty() {
            return Ok(0.0);
        }
        let b = self.config.discriminator_batch;
        let w = 2 * self.state.normalizer.dim();
        let norm = &self.state.normalizer;
        let mut fake = Vec::with_capacity(b * w);
        let mut real = Vec::with_capacity(b * w);
        for _ in 0..b {
            let (skill, prev, cur) = &fake_pairs[self.state.rng.random_range(0..fake_pairs.len())];
            fake.extend(norm.normalize(prev));
            fake.extend(norm.normalize(cur));
            let (rp, rc) = self.state.premium.sample_transition(*skill, &mut self.state.rng);
            real.extend(norm.normalize(rp));
            real.extend(norm.normalize(rc));
        }
        let fake = rows(fake, w)?;
        let real = rows(real, w)?;
        discriminator_update(&mut self.discriminator, real.view(), fake.view(), None)
    }

    fn ece_step(&mut self, ro: &Rollout) -> Result<(EceLoss, f64, bool)> {
        let valid: Vec<usize> = (0..ro.ece_rows).filter(|&i| !ro.ece_next[i * self.ece.dims.proprio].is_nan()).collect();
        if valid.is_empty() {
            return Ok((EceLoss::default(), 0.0, false));
        }
        let d = self.ece.dims;
        let pick = |src: &[f64], w: usize| -> Result<Array2<f64>> {
            let mut out = Vec::with_capacity(valid.len() * w);
            for &i in &valid {
                out.extend_from_slice(&src[i * w..(i + 1) * w]);
            }
            rows(out, w)
        };
        let history = pick(&ro.ece_history, d.encoder_in())?;
        let skills = pick(&ro.ece_skill, d.num_skills)?;
        let velocity = pick(&ro.ece_velocity, d.velocity)?;
        let next = pick(&ro.ece_next, d.proprio)?;
        let batch = EceBatch {
            history: history.view(),
            skills: skills.view(),
            velocity: velocity.view(),
            next_obs: next.view(),
        };
        let mean_reward = ro.task_reward_sum / ro.steps.max(1) as f64;
        let best = self.state.reward_best.map_or(mean_reward, |b| b.max(mean_reward));
        self.state.reward_best = Some(best);
        let p = adaboot_gate(mean_reward, best);
        let eps = Array2::from_shape_fn((valid.len(), d.latent), |_| self.state.rng.sample(StandardNormal));
        let (loss, mut g) = ece_loss_and_grads(&self.ece, &batch, eps.view(), self.config.ece_beta)?;
        if !loss.total.is_finite() {
            return Err(KirasError::NonFinite("ECE loss".into()));
        }
        let update = self.state.rng.random::<f64>() < p;
        if update {
            let m = Some(self.config.max_grad_norm);
            self.ece.encoder.apply(&mut g.encoder, m)?;
            self.ece.decoder.apply(&mut g.decoder, m)?;
            self.ece.prior.apply(&mut g.prior, m)?;
        }
        Ok((loss, p, update))
    }

    /// Runs one rollout and update phase.
    pub fn iterate(&mut self) -> Result<IterationMetrics> {
        let t = self.state.iteration;
        if t >= self.state.t1 && !self.state.stage2_started {
            self.begin_stage2()?;
        }
        let stage1 = t < self.state.t1;
        let (omega_task, omega_imitation) = if stage1 {
            omega_schedule(t - self.state.stage_origin, self.state.t1 - self.state.stage_origin, self.config.sigma)
        } else {
            (1.0, 0.0)
        };
        let values = self.reference_values()?;
        self.state.sampler.set_values(&values)?;
        let skill_probs = self.state.sampler.probs().to_vec();

        let ro = self.rollout(stage1)?;
        let n = self.state.envs.len();
        let h = self.config.horizon;
        let mut adv_task = vec![0.0; n * h];
        let mut adv_imit = vec![0.0; n * h];
        let mut ret_task = vec![0.0; n * h];
        let mut ret_imit = vec![0.0; n * h];
        for e in 0..n {
            let idx: Vec<usize> = (0..h).map(|k| k * n + e).collect();
            let gather = |v: &[f64]| idx.iter().map(|&i| v[i]).collect::<Vec<f64>>();
            let dones: Vec<bool> = idx.iter().map(|&i| ro.dones[i]).collect();
            let (a, r) = gae(
                &gather(&ro.r_task),
                &gather(&ro.v_task),
                &dones,
                ro.last_v_task[e],
                self.config.gamma,
                self.config.gae_lambda,
            )?;
            let (ai, ri) = gae(
                &gather(&ro.r_imitation),
                &gather(&ro.v_imitation),
                &dones,
                ro.last_v_imitation[e],
                self.config.gamma,
                self.config.gae_lambda,
            )?;
            for (j, &i) in idx.iter().enumerate() {
                adv_task[i] = a[j];
                ret_task[i] = r[j];
                adv_imit[i] = ai[j];
                ret_imit[i] = ri[j];
            }
        }
        let mixed = mix_advantages(&adv_task, &adv_imit, omega_task, omega_imitation)?;
        let layout = self.layout();
        let batch = PpoBatch {
            actor_obs: rows(ro.actor_obs.clone(), self.policy.actor.net.input_dim())?,
            critic_obs: rows(ro.critic_obs.clone(), layout.privileged_dim())?,
            actions: rows(ro.actions.clone(), NUM_JOINTS)?,
            old_log_probs: ro.log_probs.clone(),
            advantages: mixed.mixed,
            returns_task: ret_task,
            returns_imitation: ret_imit,
        };
        let ppo = ppo_update(
            &batch,
            &mut self.policy,
            &mut self.critic_task,
            &mut self.critic_imitation,
            &self.config.ppo(),
            &mut self.state.rng,
        )?;
        let discriminator_loss = if stage1 { self.discriminator_step(&ro.fake_pairs)? } else { 0.0 };
        let (ece, ece_update_prob, ece_updated) = self.ece_step(&ro)?;

        let mut levels = vec![0.0; TerrainType::ALL.len()];
        let mut counts = vec![0usize; TerrainType::ALL.len()];
        for env in &self.state.envs {
            levels[env.terrain.index()] += env.level as f64;
            counts[env.terrain.index()] += 1;
        }
        for (l, c) in levels.iter_mut().zip(&counts) {
            if *c > 0 {
                *l /= *c as f64;
            }
        }
        let k = self.num_skills();
        let metrics = IterationMetrics {
            iteration: t,
            stage: if stage1 { 1 } else { 2 },
            omega_task,
            omega_imitation,
            rewards: ro.reward_sum.scaled(1.0 / ro.steps.max(1) as f64),
            skill_probs,
            epsilon: (0..k).map(|i| self.state.premium.epsilon(i)).collect(),
            premium_sizes: (0..k).map(|i| self.state.premium.skill(i).premium_len()).collect(),
            discriminator_loss,
            ece,
            ece_update_prob,
            ece_updated,
            velocity_rmse: (ro.velocity_sq_err / ro.velocity_count.max(1) as f64).sqrt(),
            ppo,
            episodes: ro.episodes,
            collisions: ro.collisions,
            diverged: ro.diverged,
            admitted: ro.admitted,
            levels,
        };
        self.check_finite()?;
        self.state.iteration += 1;
        Ok(metrics)
    }

    fn check_finite(&self) -> Result<()> {
        let nets = [
            ("actor", &self.policy.actor.net),
            ("task critic", &self.critic_task.net),
            ("imitation critic", &self.critic_imitation.net),
            ("ECE encoder", &self.ece.encoder.net),
            ("ECE decoder", &self.ece.decoder.net),
            ("ECE prior", &self.ece.prior.net),
            ("discriminator", &self.discriminator.model.net),
        ];
        for (name, net) in nets {
            if !net.all_finite() {
                return Err(KirasError::NonFinite(format!("{name} parameters")));
            }
        }
        if self.policy.log_std.iter().any(|v| !v.is_finite()) {
            return Err(KirasError::NonFinite("policy log-std".into()));
        }
        Ok(())
    }

    /// Trains until the end of the current schedule, appending metrics to
    /// `<out_dir>/metrics.csv` and writing checkpoints into `<out_dir>`.
    pub fn train(&mut self, mut progress: impl FnMut(&IterationMetrics)) -> Result<PathBuf> {
        let out = PathBuf::from(&self.config.out_dir);
        std::fs::create_dir_all(&out)?;
        let mut log = MetricsLog::open(&out.join("metrics.csv"), &self.skill_names())?;
        let mut latest = out.join("latest.kira");
        while !self.is_finished() {
            let m = self.iterate()?;
            log.append(&m)?;
            progress(&m);
            let done = self.state.iteration;
            if done % self.config.checkpoint_every.max(1) == 0 || self.is_finished() {
                let ck = self.to_checkpoint()?;
                ck.save(&out.join(format!("ckpt_{done:06}.kira")))?;
                ck.save(&out.join("latest.kira"))?;
                latest = out.join("latest.kira");
            }
        }
        Ok(latest)
    }

    pub fn to_checkpoint(&self) -> Result<Checkpoint> {
        let mut ck = Checkpoint::default();
        ck.push_json("config", &self.config)?;
        ck.push_json("keyframes", &self.keyframes)?;
        put_trainable(&mut ck, "actor", &self.policy.actor)?;
        ck.push_tensor("actor/log_std", vec![self.policy.log_std.len()], self.policy.log_std.clone());
        put_adam(&mut ck, "actor/log_std", &self.policy.log_std_adam)?;
        put_trainable(&mut ck, "critic_task", &self.critic_task)?;
        put_trainable(&mut ck, "critic_imitation", &self.critic_imitation)?;
        ck.push_json("ece/dims", &self.ece.dims)?;
        put_trainable(&mut ck, "ece_encoder", &self.ece.encoder)?;
        put_trainable(&mut ck, "ece_decoder", &self.ece.decoder)?;
        put_trainable(&mut ck, "ece_prior", &self.ece.prior)?;
        put_trainable(&mut ck, "discriminator", &self.discriminator.model)?;
        if let Some(f) = &self.actor_flat {
            put_net(&mut ck, "actor_flat", f)?;
        }
        ck.push_json("state", &self.state)?;
        Ok(ck)
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let config: TrainConfig = ck.json("config")?;
        let keyframes: Vec<Keyframe> = ck.json("keyframes")?;
        let actor = get_trainable(ck, "actor")?;
        let (_, log_std) = ck.tensor("actor/log_std")?;
        let policy = GaussianPolicy {
            actor,
            log_std: log_std.to_vec(),
            log_std_adam: get_adam(ck, "actor/log_std")?,
        };
        let ece = EceNets {
            dims: ck.json("ece/dims")?,
            encoder: get_trainable(ck, "ece_encoder")?,
            decoder: get_trainable(ck, "ece_decoder")?,
            prior: get_trainable(ck, "ece_prior")?,
        };
        let actor_flat = if ck.has("actor_flat/meta") { Some(get_net(ck, "actor_flat")?) } else { None };
        let state: TrainState = ck.json("state")?;
        let default_joint_pos = keyframes
            .first()
            .ok_or_else(|| KirasError::Checkpoint("no keyframes stored".into()))?
            .joint_pos;
        let bank = TerrainBank::new(config.seed)?;
        let trainer = Self {
            default_joint_pos,
            policy,
            critic_task: get_trainable(ck, "critic_task")?,
            critic_imitation: get_trainable(ck, "critic_imitation")?,
            ece,
            discriminator: Discriminator {
                model: get_trainable(ck, "discriminator")?,
            },
            actor_flat,
            state,
            sim_params: SimParams::default(),
            bank,
            config,
            keyframes,
        };
        if trainer.network_dims() != trainer.expected_dims()? {
            return Err(KirasError::Checkpoint("network widths do not match the stored skill set".into()));
        }
        Ok(trainer)
    }

    /// Continues a checkpointed run under `config`. The stored configuration
    /// stays authoritative except for where outputs go.
    pub fn resume_with(&mut self, config: &TrainConfig) -> Result<()> {
        if !self.config.structure_matches(config) {
            return Err(KirasError::Config(
                "config describes different network or environment shapes than the checkpoint".into(),
            ));
        }
        self.config.out_dir = config.out_dir.clone();
        self.config.checkpoint_every = config.checkpoint_every;
        Ok(())
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_checkpoint()?.save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_checkpoint(&Checkpoint::load(path)?)
    }
}

/// Append-only CSV log with a header written once per file.
pub struct MetricsLog {
    file: std::fs::File,
}

impl MetricsLog {
    pub fn open(path: &Path, skill_names: &[String]) -> Result<Self> {
        let fresh = std::fs::metadata(path).map(|m| m.len() == 0).unwrap_or(true);
        let mut file = OpenOptions::new().create(true).append(true).open(path)?;
        if fresh {
            writeln!(file, "{}", IterationMetrics::header(skill_names).join(","))?;
        }
        Ok(Self { file })
    }

    pub fn append(&mut self, m: &IterationMetrics) -> Result<()> {
        writeln!(self.file, "{}", m.row().join(","))?;
        self.file.flush()?;
        Ok(())
    }
}
