use ndarray::{Array2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::policy::{surrogate_loss, value_loss, GaussianPolicy, SurrogateBatch};
use crate::error::{ensure_dim, KirasError, Result};
use crate::numerics::{clip_grad_norm, TrainableNet};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PpoConfig {
    pub clip: f64,
    pub epochs: usize,
    pub minibatches: usize,
    pub entropy_coef: f64,
    pub gamma: f64,
    pub lambda: f64,
    pub max_grad_norm: f64,
}

impl Default for PpoConfig {
    fn default() -> Self {
        Self {
            clip: 0.2,
            epochs: 5,
            minibatches: 4,
            entropy_coef: 0.005,
            gamma: 0.99,
            lambda: 0.95,
            max_grad_norm: 1.0,
        }
    }
}

/// Flattened rollout data ready for the update phase.
#[derive(Clone, Debug, PartialEq)]
pub struct PpoBatch {
    pub actor_obs: Array2<f64>,
    pub critic_obs: Array2<f64>,
    pub actions: Array2<f64>,
    pub old_log_probs: Vec<f64>,
    pub advantages: Vec<f64>,
    pub returns_task: Vec<f64>,
    pub returns_imitation: Vec<f64>,
}

impl PpoBatch {
    pub fn len(&self) -> usize {
        self.actor_obs.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn validate(&self) -> Result<()> {
        let n = self.len();
        ensure_dim("critic observations", n, self.critic_obs.nrows())?;
        ensure_dim("actions", n, self.actions.nrows())?;
        ensure_dim("log-probs", n, self.old_log_probs.len())?;
        ensure_dim("advantages", n, self.advantages.len())?;
        ensure_dim("task returns", n, self.returns_task.len())?;
        ensure_dim("imitation returns", n, self.returns_imitation.len())?;
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PpoLosses {
    pub actor: f64,
    pub value_task: f64,
    pub value_imitation: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

fn regress(critic: &mut TrainableNet, obs: &Array2<f64>, returns: &[f64], max_norm: f64) -> Result<f64> {
    let (loss, mut g) = value_loss(&critic.net, obs.view(), returns)?;
    if !loss.is_finite() {
        return Err(KirasError::NonFinite("critic loss".into()));
    }
    critic.apply(&mut g, Some(max_norm))?;
    Ok(loss)
}

/// Clipped-surrogate actor update plus independent regression of each
/// critic to its own returns. Losses are averaged over all minibatches.
pub fn ppo_update<R: Rng + ?Sized>(
    batch: &PpoBatch,
    policy: &mut GaussianPolicy,
    critic_task: &mut TrainableNet,
    critic_imitation: &mut TrainableNet,
    cfg: &PpoConfig,
    rng: &mut R,
) -> Result<PpoLosses> {
    batch.validate()?;
    let n = batch.len();
    if n == 0 || cfg.minibatches == 0 {
        return Err(KirasError::InvalidArgument("PPO needs a non-empty batch and minibatches".into()));
    }
    let mb = n.div_ceil(cfg.minibatches);
    let mut idx: Vec<usize> = (0..n).collect();
    let mut out = PpoLosses::default();
    let mut count = 0.0;
    for _ in 0..cfg.epochs {
        idx.shuffle(rng);
        for chunk in idx.chunks(mb) {
            let obs = batch.actor_obs.select(Axis(0), chunk);
            let cobs = batch.critic_obs.select(Axis(0), chunk);
            let actions = batch.actions.select(Axis(0), chunk);
            let pick = |v: &[f64]| chunk.iter().map(|&i| v[i]).collect::<Vec<f64>>();
            let old_lp = pick(&batch.old_log_probs);
            let adv = pick(&batch.advantages);
            let sb = SurrogateBatch {
                obs: obs.view(),
                actions: actions.view(),
                old_log_probs: &old_lp,
                advantages: &adv,
            };
            let (stats, mut g, mut g_ls) = surrogate_loss(&policy.actor.net, &policy.log_std, &sb, cfg.clip, cfg.entropy_coef)?;
            if !stats.loss.is_finite() {
                return Err(KirasError::NonFinite(format!("actor loss {}", stats.loss)));
            }
            {
                let mut slices = g.slices_mut();
                slices.push(&mut g_ls);
                clip_grad_norm(&mut slices, cfg.max_grad_norm);
            }
            policy.actor.apply(&mut g, None)?;
            policy.log_std_adam.step(&mut [&mut policy.log_std], &[&g_ls])?;

            let vt = regress(critic_task, &cobs, &pick(&batch.returns_task), cfg.max_grad_norm)?;
            let vi = regress(critic_imitation, &cobs, &pick(&batch.returns_imitation), cfg.max_grad_norm)?;

            out.actor += stats.loss;
            out.entropy += stats.entropy;
            out.approx_kl += stats.approx_kl;
            out.clip_fraction += stats.clip_fraction;
            out.value_task += vt;
            out.value_imitation += vi;
            count += 1.0;
        }
    }
    for v in [
        &mut out.actor,
        &mut out.entropy,
        &mut out.approx_kl,
        &mut out.clip_fraction,
        &mut out.value_task,
        &mut out.value_imitation,
    ] {
        *v /= count;
    }
    Ok(out)
}
