//! Keyframe-guided skill learning for a planar legged robot: self-imitation,
//! dual-critic PPO, a context estimator and proficiency-based skill sampling.

pub mod ece;
pub mod error;
pub mod imitation;
pub mod keyframes;
pub mod numerics;
pub mod ppo;
pub mod rewards;
pub mod sim;
pub mod skills;
pub mod trainer;

pub use error::{KirasError, Result};
