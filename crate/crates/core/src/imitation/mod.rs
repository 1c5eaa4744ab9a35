//! Premium trajectory selection, DTW scoring, and the LS-GAN self-imitation
//! reward.

mod buffer;
mod discriminator;
mod dtw;
mod normalizer;

pub use buffer::{FrameSeq, PremiumBuffer, SkillBuffer, DEFAULT_PREMIUM_CAPACITY};
pub use discriminator::{
    discriminator_update, ls_gan_loss, mean_score, pair_input, pairs_matrix, sil_reward, sil_reward_from_score,
    Discriminator,
};
pub use dtw::dtw_distance;
pub use normalizer::RunningNorm;

use crate::error::{KirasError, Result};

/// How the DTW term enters the trajectory score.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ScoreConfig {
    pub lambda_dtw: f64,
    /// Adds the distance instead of subtracting it.
    pub eq1_verbatim_sign: bool,
}

impl Default for ScoreConfig {
    fn default() -> Self {
        Self {
            lambda_dtw: 1.0,
            eq1_verbatim_sign: false,
        }
    }
}

/// Sum of combined rewards minus (or plus) the weighted DTW distance to the
/// keyframe trajectory.
pub fn score_trajectory<A: AsRef<[f64]>, B: AsRef<[f64]>>(
    trajectory: &[A],
    keyframe: &[B],
    rewards: &[f64],
    config: ScoreConfig,
) -> Result<f64> {
    if trajectory.len() != rewards.len() {
        return Err(KirasError::DimensionMismatch {
            context: "trajectory vs reward length",
            expected: trajectory.len(),
            got: rewards.len(),
        });
    }
    let d = dtw_distance(trajectory, keyframe)?;
    let sign = if config.eq1_verbatim_sign { 1.0 } else { -1.0 };
    Ok(rewards.iter().sum::<f64>() + sign * config.lambda_dtw * d)
}
