use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{KirasError, Result};
use crate::imitation::ScoreConfig;
use crate::numerics::AdamConfig;
use crate::ppo::PpoConfig;
use crate::rewards::{RewardCoefficients, RewardWeights};
use crate::sim::randomization::{Range, RandomizationRanges, DEFAULT_COMMAND_RANGE};
use crate::sim::TerrainType;
use crate::skills::InitNoise;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Preset {
    #[serde(rename = "desk")]
    Desk,
    #[serde(rename = "solo8-dims")]
    Solo8Dims,
}

/// Every key has a default, so an empty file is a valid desk configuration.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub preset: Preset,
    pub seed: u64,
    /// End of the skill-learning stage, in iterations.
    pub t1: u64,
    /// End of terrain finetuning, in iterations.
    pub t2: u64,
    pub num_envs: usize,
    pub horizon: usize,
    pub episode_steps: usize,
    /// Keyframe file; empty selects the five built-in skills.
    pub keyframes: String,
    pub out_dir: String,
    pub checkpoint_every: u64,

    pub terrain_mix: Vec<TerrainType>,
    pub initial_level: u8,
    pub command_range: Range,
    pub eval_command_vx: f64,
    pub randomization: RandomizationRanges,
    pub init_noise: InitNoise,
    /// Joint target offset per unit action, radians.
    pub action_scale: f64,
    pub action_clip: f64,

    pub actor_hidden: Vec<usize>,
    pub critic_hidden: Vec<usize>,
    pub encoder_hidden: Vec<usize>,
    pub decoder_hidden: Vec<usize>,
    pub discriminator_hidden: Vec<usize>,
    pub learning_rate: f64,

    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub entropy_coef: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub max_grad_norm: f64,
    pub sigma: f64,

    pub history: usize,
    pub latent_dim: usize,
    pub ece_beta: f64,

    pub premium_capacity: usize,
    pub premium_horizon: usize,
    pub lambda_dtw: f64,
    pub eq1_verbatim_sign: bool,
    pub discriminator_batch: usize,

    pub add_skill_t1: u64,
    pub add_skill_t2: u64,

    pub rewards: RewardCoefficients,
    pub reward_weights: RewardWeights,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self::preset(Preset::Desk)
    }
}

impl TrainConfig {
    pub fn preset(preset: Preset) -> Self {
        let desk = Self {
            preset,
            seed: 1,
            t1: 2_000,
            t2: 8_000,
            num_envs: 64,
            horizon: 24,
            episode_steps: 300,
            keyframes: String::new(),
            out_dir: "runs/desk".into(),
            checkpoint_every: 500,
            terrain_mix: TerrainType::ALL.to_vec(),
            initial_level: 0,
            command_range: DEFAULT_COMMAND_RANGE,
            eval_command_vx: 0.0,
            randomization: RandomizationRanges::default(),
            init_noise: InitNoise::default(),
            action_scale: 0.5,
            action_clip: 4.0,
            actor_hidden: vec![64, 64],
            critic_hidden: vec![64, 64],
            encoder_hidden: vec![64, 64],
            decoder_hidden: vec![64, 64],
            discriminator_hidden: vec![64, 64],
            learning_rate: 1e-3,
            clip: 0.2,
            epochs: 5,
            minibatches: 4,
            entropy_coef: 0.005,
            gamma: 0.99,
            gae_lambda: 0.95,
            max_grad_norm: 1.0,
            sigma: 0.8,
            history: 4,
            latent_dim: 8,
            ece_beta: 0.1,
            premium_capacity: 8,
            premium_horizon: 50,
            lambda_dtw: 1.0,
            eq1_verbatim_sign: false,
            discriminator_batch: 256,
            add_skill_t1: 1_000,
            add_skill_t2: 1_000,
            rewards: RewardCoefficients::default(),
            reward_weights: RewardWeights::default(),
        };
        match preset {
            Preset::Desk => desk,
            Preset::Solo8Dims => Self {
                t1: 6_000,
                t2: 30_000,
                num_envs: 4_096,
                out_dir: "runs/solo8".into(),
                actor_hidden: vec![128, 128, 128],
                critic_hidden: vec![128, 128, 128],
                encoder_hidden: vec![128, 64],
                decoder_hidden: vec![64, 128],
                discriminator_hidden: vec![512, 256],
                add_skill_t1: 6_000,
                add_skill_t2: 6_000,
                ..desk
            },
        }
    }

    /// Parses a config file. Keys absent from the file take the defaults of
    /// the preset named in it. Relative paths resolve against the file's
    /// directory.
    pub fn from_toml_str(text: &str, base_dir: Option<&Path>) -> Result<Self> {
        let value: toml::Table = toml::from_str(text)?;
        let preset = match value.get("preset") {
            Some(v) => v
                .clone()
                .try_into::<Preset>()
                .map_err(|e| KirasError::Config(format!("preset: {e}")))?,
            None => Preset::Desk,
        };
        let mut merged =
            toml::Table::try_from(Self::preset(preset)).map_err(|e| KirasError::Config(e.to_string()))?;
        merge(&mut merged, value);
        let mut cfg: Self = toml::Value::Table(merged)
            .try_into()
            .map_err(|e: toml::de::Error| KirasError::Config(e.to_string()))?;
        if let Some(dir) = base_dir {
            cfg.keyframes = resolve(dir, &cfg.keyframes);
            cfg.out_dir = resolve(dir, &cfg.out_dir);
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        Self::from_toml_str(&text, path.parent())
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| KirasError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(KirasError::Config(m));
        if self.t1 >= self.t2 {
            return fail(format!("t1 ({}) must be smaller than t2 ({})", self.t1, self.t2));
        }
        if self.add_skill_t1 == 0 {
            return fail("add_skill_t1 must be positive so a new skill is learned with self-imitation active".into());
        }
        if self.num_envs == 0 || self.horizon == 0 {
            return fail("num_envs and horizon must be positive".into());
        }
        if self.episode_steps < 2 {
            return fail("episode_steps must be at least 2".into());
        }
        if self.premium_horizon < 2 || self.premium_horizon > self.episode_steps {
            return fail("premium_horizon must lie in 2..=episode_steps".into());
        }
        if self.premium_capacity == 0 || self.discriminator_batch == 0 {
            return fail("premium_capacity and discriminator_batch must be positive".into());
        }
        if self.terrain_mix.is_empty() {
            return fail("terrain_mix must name at least one terrain".into());
        }
        if self.initial_level > crate::sim::terrain::MAX_LEVEL {
            return fail(format!("initial_level {} above the maximum", self.initial_level));
        }
        if self.history == 0 || self.latent_dim == 0 {
            return fail("history and latent_dim must be positive".into());
        }
        if !(0.0..=1.0).contains(&self.sigma) {
            return fail(format!("sigma {} outside [0, 1]", self.sigma));
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0 && self.gae_lambda >= 0.0 && self.gae_lambda <= 1.0) {
            return fail("gamma must lie in (0, 1] and gae_lambda in [0, 1]".into());
        }
        if !(self.learning_rate > 0.0 && self.clip > 0.0 && self.epochs > 0 && self.minibatches > 0) {
            return fail("learning_rate, clip, epochs and minibatches must be positive".into());
        }
        if !(self.action_scale > 0.0 && self.action_clip > 0.0) {
            return fail("action_scale and action_clip must be positive".into());
        }
        if self.ece_beta < 0.0 || self.lambda_dtw < 0.0 || self.entropy_coef < 0.0 {
            return fail("ece_beta, lambda_dtw and entropy_coef must be non-negative".into());
        }
        if !(self.command_range.lo <= self.command_range.hi) {
            return fail("command_range must satisfy lo <= hi".into());
        }
        let n = &self.init_noise;
        if n.joint_rad < 0.0 || n.height_m < 0.0 || n.pitch_deg < 0.0 || !(0.0..=1.0).contains(&n.cross_skill_prob) {
            return fail("init_noise magnitudes must be non-negative and cross_skill_prob a probability".into());
        }
        for h in [
            &self.actor_hidden,
            &self.critic_hidden,
            &self.encoder_hidden,
            &self.decoder_hidden,
            &self.discriminator_hidden,
        ] {
            if h.contains(&0) {
                return fail("hidden layer widths must be positive".into());
            }
        }
        self.randomization.validate()?;
        Ok(())
    }

    pub fn adam(&self) -> AdamConfig {
        AdamConfig {
            learning_rate: self.learning_rate,
            ..AdamConfig::default()
        }
    }

    pub fn ppo(&self) -> PpoConfig {
        PpoConfig {
            clip: self.clip,
            epochs: self.epochs,
            minibatches: self.minibatches,
            entropy_coef: self.entropy_coef,
            gamma: self.gamma,
            lambda: self.gae_lambda,
            max_grad_norm: self.max_grad_norm,
        }
    }

    pub fn score(&self) -> ScoreConfig {
        ScoreConfig {
            lambda_dtw: self.lambda_dtw,
            eq1_verbatim_sign: self.eq1_verbatim_sign,
        }
    }

    pub fn keyframe_path(&self) -> Option<PathBuf> {
        (!self.keyframes.is_empty()).then(|| PathBuf::from(&self.keyframes))
    }

    /// Fields that must agree between a checkpoint and a config resuming it.
    pub fn structure_matches(&self, other: &Self) -> bool {
        self.num_envs == other.num_envs
            && self.history == other.history
            && self.latent_dim == other.latent_dim
            && self.actor_hidden == other.actor_hidden
            && self.critic_hidden == other.critic_hidden
            && self.encoder_hidden == other.encoder_hidden
            && self.decoder_hidden == other.decoder_hidden
            && self.discriminator_hidden == other.discriminator_hidden
            && self.premium_horizon == other.premium_horizon
    }
}

fn merge(base: &mut toml::Table, over: toml::Table) {
    for (k, v) in over {
        match (base.get_mut(&k), v) {
            (Some(toml::Value::Table(b)), toml::Value::Table(o)) => merge(b, o),
            (_, v) => {
                base.insert(k, v);
            }
        }
    }
}

fn resolve(dir: &Path, p: &str) -> String {
    if p.is_empty() || Path::new(p).is_absolute() {
        p.to_string()
    } else {
        dir.join(p).to_string_lossy().into_owned()
    }
}

/// Input and output widths of every network.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct NetworkDims {
    pub actor_in: usize,
    pub actor_out: usize,
    pub critic_in: usize,
    pub encoder_in: usize,
    pub encoder_out: usize,
    pub decoder_in: usize,
    pub decoder_out: usize,
    pub discriminator_in: usize,
}

/// Observation sizes the network widths derive from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ObservationSizes {
    pub proprio: usize,
    pub privileged: usize,
    pub imitation: usize,
    pub velocity: usize,
    pub latent: usize,
    pub history: usize,
    pub num_skills: usize,
    pub actions: usize,
}

impl ObservationSizes {
    /// Observation widths of the eight-joint quadruped the solo8-dims networks are sized for.
    pub const SOLO8: Self = Self {
        proprio: 31,
        privileged: 107,
        imitation: 19,
        velocity: 3,
        latent: 8,
        history: 4,
        num_skills: 5,
        actions: 8,
    };
}

impl NetworkDims {
    /// The actor sees proprioception plus the estimated context only; the
    /// critics see the privileged vector.
    pub fn derive(s: &ObservationSizes) -> Result<Self> {
        let d = Self {
            actor_in: s.proprio + s.velocity + s.latent,
            actor_out: s.actions,
            critic_in: s.privileged,
            encoder_in: s.history * s.proprio,
            encoder_out: s.velocity + 2 * s.latent,
            decoder_in: s.latent + s.num_skills,
            decoder_out: s.proprio,
            discriminator_in: 2 * s.imitation,
        };
        if d.critic_in <= s.proprio {
            return Err(KirasError::Config("privileged observation must extend the proprioceptive one".into()));
        }
        Ok(d)
    }
}
