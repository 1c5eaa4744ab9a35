//! Dual-critic PPO: per-critic GAE, normalized advantage mixing with a
//! scheduled weight, and a clipped-surrogate update.

mod gae;
mod mixing;
mod policy;
mod update;

pub use gae::gae;
pub use mixing::{mix_advantages, normalize, omega_schedule, AdvantagePair, STD_FLOOR};
pub use policy::{
    log_prob, surrogate_loss, value_loss, GaussianPolicy, SurrogateBatch, SurrogateStats, ACTOR_OUTPUT_GAIN,
    INITIAL_LOG_STD,
};
pub use update::{ppo_update, PpoBatch, PpoConfig, PpoLosses};
