use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{ensure_dim, KirasError, Result};
use crate::numerics::{Activation, AdamConfig, AdamState, DenseNet, Gradients, TrainableNet};

const HALF_LOG_TWO_PI: f64 = 0.918_938_533_204_672_8;
pub const INITIAL_LOG_STD: f64 = -1.0;
pub const ACTOR_OUTPUT_GAIN: f64 = 0.01;

/// Diagonal Gaussian policy with a state-independent learnable log-std.
#[derive(Clone, Debug, PartialEq)]
pub struct GaussianPolicy {
    pub actor: TrainableNet,
    pub log_std: Vec<f64>,
    pub log_std_adam: AdamState,
}

impl GaussianPolicy {
    pub fn new<R: Rng + ?Sized>(input_dim: usize, hidden: &[usize], action_dim: usize, adam: AdamConfig, rng: &mut R) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden);
        dims.push(action_dim);
        let net = DenseNet::new(&dims, Activation::Elu, Activation::Linear, ACTOR_OUTPUT_GAIN, rng)?;
        Ok(Self::from_net(net, adam))
    }

    pub fn from_net(net: DenseNet, adam: AdamConfig) -> Self {
        let n = net.output_dim();
        Self {
            actor: TrainableNet::new(net, adam),
            log_std: vec![INITIAL_LOG_STD; n],
            log_std_adam: AdamState::new(&[n], adam),
        }
    }

    pub fn action_dim(&self) -> usize {
        self.log_std.len()
    }

    pub fn mean(&self, obs: ArrayView1<f64>) -> Result<Array1<f64>> {
        self.actor.net.forward(obs)
    }

    pub fn mean_batch(&self, obs: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.actor.net.forward_batch(obs)
    }

    /// Draws `mean + std * noise`; returns the action and its log-probability.
    pub fn sample<R: Rng + ?Sized>(&self, mean: ArrayView1<f64>, rng: &mut R) -> (Vec<f64>, f64) {
        let action: Vec<f64> = mean
            .iter()
            .zip(&self.log_std)
            .map(|(m, ls)| {
                let e: f64 = rng.sample(StandardNormal);
                m + ls.exp() * e
            })
            .collect();
        let lp = log_prob(&mean.to_vec(), &self.log_std, &action);
        (action, lp)
    }

    pub fn entropy(&self) -> f64 {
        self.log_std.iter().map(|ls| ls + 0.5 + HALF_LOG_TWO_PI).sum()
    }

    pub fn reset_optimizers(&mut self) {
        self.actor.reset_optimizer();
        self.log_std_adam = AdamState::new(&[self.log_std.len()], self.log_std_adam.config);
    }
}

pub fn log_prob(mean: &[f64], log_std: &[f64], action: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(action)
        .map(|((m, ls), a)| {
            let z = (a - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LOG_TWO_PI
        })
        .sum()
}

/// Clipped-surrogate loss statistics for one minibatch.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct SurrogateStats {
    pub loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
}

/// Inputs of the clipped-surrogate objective for one minibatch.
#[derive(Clone, Copy, Debug)]
pub struct SurrogateBatch<'a> {
    pub obs: ArrayView2<'a, f64>,
    pub actions: ArrayView2<'a, f64>,
    pub old_log_probs: &'a [f64],
    pub advantages: &'a [f64],
}

/// `mean(-min(r A, clip(r) A)) - c_ent * entropy` and its gradient with
/// respect to actor parameters and the log-std vector.
pub fn surrogate_loss(
    actor: &DenseNet,
    log_std: &[f64],
    batch: &SurrogateBatch,
    clip: f64,
    entropy_coef: f64,
) -> Result<(SurrogateStats, Gradients, Vec<f64>)> {
    let n = batch.obs.nrows();
    if n == 0 {
        return Err(KirasError::InvalidArgument("empty PPO minibatch".into()));
    }
    ensure_dim("surrogate actions", n, batch.actions.nrows())?;
    ensure_dim("surrogate log-probs", n, batch.old_log_probs.len())?;
    ensure_dim("surrogate advantages", n, batch.advantages.len())?;
    ensure_dim("action width", log_std.len(), batch.actions.ncols())?;
    let (mean, cache) = actor.forward_cached(batch.obs)?;
    let inv_var: Vec<f64> = log_std.iter().map(|ls| (-2.0 * ls).exp()).collect();
    let nf = n as f64;

    let mut upstream = Array2::zeros(mean.raw_dim());
    let mut g_log_std = vec![0.0; log_std.len()];
    let mut stats = SurrogateStats::default();
    for i in 0..n {
        let m = mean.row(i);
        let a = batch.actions.row(i);
        let lp = log_prob(&m.to_vec(), log_std, &a.to_vec());
        let log_ratio = lp - batch.old_log_probs[i];
        let ratio = log_ratio.exp();
        let adv = batch.advantages[i];
        let unclipped = ratio * adv;
        let clipped = ratio.clamp(1.0 - clip, 1.0 + clip) * adv;
        stats.loss -= unclipped.min(clipped) / nf;
        stats.approx_kl += ((ratio - 1.0) - log_ratio) / nf;
        if (ratio - 1.0).abs() > clip {
            stats.clip_fraction += 1.0 / nf;
        }
        // d(loss_i)/d(log p_i); zero when the clipped branch is active and saturated.
        let dlp = if unclipped <= clipped || (1.0 - clip..=1.0 + clip).contains(&ratio) {
            -adv * ratio / nf
        } else {
            0.0
        };
        if dlp == 0.0 {
            continue;
        }
        for j in 0..log_std.len() {
            let diff = a[j] - m[j];
            upstream[[i, j]] = dlp * diff * inv_var[j];
            g_log_std[j] += dlp * (diff * diff * inv_var[j] - 1.0);
        }
    }
    stats.entropy = log_std.iter().map(|ls| ls + 0.5 + HALF_LOG_TWO_PI).sum();
    stats.loss -= entropy_coef * stats.entropy;
    g_log_std.iter_mut().for_each(|g| *g -= entropy_coef);
    let (grads, _) = actor.backward(&cache, upstream.view())?;
    Ok((stats, grads, g_log_std))
}

/// Mean squared error of a scalar critic and its parameter gradient.
pub fn value_loss(critic: &DenseNet, obs: ArrayView2<f64>, returns: &[f64]) -> Result<(f64, Gradients)> {
    let n = obs.nrows();
    ensure_dim("value targets", n, returns.len())?;
    ensure_dim("critic output", 1, critic.output_dim())?;
    if n == 0 {
        return Err(KirasError::InvalidArgument("empty critic batch".into()));
    }
    let (out, cache) = critic.forward_cached(obs)?;
    let nf = n as f64;
    let mut loss = 0.0;
    let mut upstream = Array2::zeros((n, 1));
    for i in 0..n {
        let e = out[[i, 0]] - returns[i];
        loss += e * e / nf;
        upstream[[i, 0]] = 2.0 * e / nf;
    }
    let (g, _) = critic.backward(&cache, upstream.view())?;
    Ok((loss, g))
}
