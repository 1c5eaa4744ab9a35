//! Environmental context estimator: a skill-conditioned CVAE that reads the
//! proprioceptive history, estimates base velocity and a residual latent,
//! and reconstructs the next proprioceptive observation.

use ndarray::{concatenate, s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, KirasError, Result};
use crate::numerics::{Activation, AdamConfig, DenseNet, Gradients, TrainableNet};

pub const LOGVAR_MIN: f64 = -8.0;
pub const LOGVAR_MAX: f64 = 8.0;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct EceDims {
    pub history: usize,
    pub proprio: usize,
    pub num_skills: usize,
    pub velocity: usize,
    pub latent: usize,
}

impl EceDims {
    pub fn encoder_in(&self) -> usize {
        self.history * self.proprio
    }

    pub fn encoder_out(&self) -> usize {
        self.velocity + 2 * self.latent
    }

    pub fn decoder_in(&self) -> usize {
        self.latent + self.num_skills
    }

    /// Width of the context vector handed to the actor.
    pub fn context(&self) -> usize {
        self.velocity + self.latent
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EceNets {
    pub dims: EceDims,
    pub encoder: TrainableNet,
    pub decoder: TrainableNet,
    pub prior: TrainableNet,
}

/// Velocity estimate, posterior and latent for a batch, one row per sample.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextLatent {
    pub v_hat: Array2<f64>,
    pub mean: Array2<f64>,
    pub log_var: Array2<f64>,
    pub z_lat: Array2<f64>,
}

impl ContextLatent {
    /// Actor-side context `[v_hat, z_lat]` for row `i`.
    pub fn context_row(&self, i: usize) -> Vec<f64> {
        self.v_hat.row(i).iter().chain(self.z_lat.row(i).iter()).copied().collect()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct EceOutput {
    pub latent: ContextLatent,
    pub reconstruction: Array2<f64>,
    pub prior_mean: Array2<f64>,
    pub prior_log_var: Array2<f64>,
}

/// Reparameterization noise source.
pub enum Sampling<'a, R: Rng + ?Sized> {
    /// Use the posterior mean.
    Mean,
    Random(&'a mut R),
    /// Explicit standard-normal draws, one row per sample.
    Fixed(ArrayView2<'a, f64>),
}

fn clamp_log_var(x: &Array2<f64>) -> Array2<f64> {
    x.mapv(|v| v.clamp(LOGVAR_MIN, LOGVAR_MAX))
}

impl EceNets {
    pub fn new<R: Rng + ?Sized>(
        dims: EceDims,
        encoder_hidden: &[usize],
        decoder_hidden: &[usize],
        adam: AdamConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let chain = |a: usize, hidden: &[usize], b: usize| {
            let mut d = vec![a];
            d.extend_from_slice(hidden);
            d.push(b);
            d
        };
        let encoder = DenseNet::new(
            &chain(dims.encoder_in(), encoder_hidden, dims.encoder_out()),
            Activation::Elu,
            Activation::Linear,
            1.0,
            rng,
        )?;
        let decoder = DenseNet::new(
            &chain(dims.decoder_in(), decoder_hidden, dims.proprio),
            Activation::Elu,
            Activation::Linear,
            1.0,
            rng,
        )?;
        // The prior starts at the standard normal.
        let prior = DenseNet::zeros(&[dims.num_skills, 2 * dims.latent], Activation::Linear, Activation::Linear)?;
        Ok(Self {
            dims,
            encoder: TrainableNet::new(encoder, adam),
            decoder: TrainableNet::new(decoder, adam),
            prior: TrainableNet::new(prior, adam),
        })
    }

    fn split_encoder(&self, out: &Array2<f64>) -> (Array2<f64>, Array2<f64>, Array2<f64>) {
        let v = self.dims.velocity;
        let l = self.dims.latent;
        (
            out.slice(s![.., ..v]).to_owned(),
            out.slice(s![.., v..v + l]).to_owned(),
            out.slice(s![.., v + l..]).to_owned(),
        )
    }

    /// Encoder-only pass at the posterior mean; this is what the actor sees.
    pub fn infer(&self, history: ArrayView2<f64>) -> Result<ContextLatent> {
        let out = self.encoder.net.forward_batch(history)?;
        let (v_hat, mean, lv) = self.split_encoder(&out);
        Ok(ContextLatent {
            v_hat,
            z_lat: mean.clone(),
            mean,
            log_var: clamp_log_var(&lv),
        })
    }

    pub fn infer_one(&self, history: ArrayView1<f64>) -> Result<Vec<f64>> {
        let h = history.insert_axis(Axis(0));
        Ok(self.infer(h)?.context_row(0))
    }

    pub fn forward<R: Rng + ?Sized>(
        &self,
        history: ArrayView2<f64>,
        skills: ArrayView2<f64>,
        sampling: Sampling<R>,
    ) -> Result<EceOutput> {
        ensure_dim("ECE history width", self.dims.encoder_in(), history.ncols())?;
        ensure_dim("ECE skill width", self.dims.num_skills, skills.ncols())?;
        ensure_dim("ECE batch", history.nrows(), skills.nrows())?;
        let mut latent = self.infer(history)?;
        let eps = noise(sampling, latent.mean.nrows(), self.dims.latent)?;
        if let Some(e) = eps {
            latent.z_lat = &latent.mean + &(latent.log_var.mapv(|v| (0.5 * v).exp()) * e);
        }
        let dec_in = concatenate![Axis(1), latent.z_lat.view(), skills];
        let reconstruction = self.decoder.net.forward_batch(dec_in.view())?;
        let p = self.prior.net.forward_batch(skills)?;
        let l = self.dims.latent;
        Ok(EceOutput {
            latent,
            reconstruction,
            prior_mean: p.slice(s![.., ..l]).to_owned(),
            prior_log_var: clamp_log_var(&p.slice(s![.., l..]).to_owned()),
        })
    }

    pub fn reset_optimizers(&mut self) {
        self.encoder.reset_optimizer();
        self.decoder.reset_optimizer();
        self.prior.reset_optimizer();
    }
}

fn noise<R: Rng + ?Sized>(sampling: Sampling<R>, rows: usize, cols: usize) -> Result<Option<Array2<f64>>> {
    Ok(match sampling {
        Sampling::Mean => None,
        Sampling::Random(rng) => Some(Array2::from_shape_fn((rows, cols), |_| rng.sample(StandardNormal))),
        Sampling::Fixed(e) => {
            ensure_dim("noise rows", rows, e.nrows())?;
            ensure_dim("noise cols", cols, e.ncols())?;
            Some(e.to_owned())
        }
    })
}

/// Closed-form `KL(N(mq, exp(lq)) || N(mp, exp(lp)))` summed over dimensions.
pub fn diag_gaussian_kl(mq: ArrayView1<f64>, lq: ArrayView1<f64>, mp: ArrayView1<f64>, lp: ArrayView1<f64>) -> f64 {
    let mut kl = 0.0;
    for d in 0..mq.len() {
        let dm = mq[d] - mp[d];
        kl += 0.5 * (lp[d] - lq[d] + (lq[d].exp() + dm * dm) / lp[d].exp() - 1.0);
    }
    kl
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct EceLoss {
    pub total: f64,
    pub velocity_mse: f64,
    pub reconstruction_mse: f64,
    pub kl: f64,
}

/// One batch of estimator training data.
#[derive(Clone, Copy, Debug)]
pub struct EceBatch<'a> {
    pub history: ArrayView2<'a, f64>,
    pub skills: ArrayView2<'a, f64>,
    pub velocity: ArrayView2<'a, f64>,
    pub next_obs: ArrayView2<'a, f64>,
}

/// The loss from already computed predictions: per-sample mean of
/// `MSE(v) + MSE(o) + beta * KL(posterior || prior)`.
pub fn ece_loss(batch: &EceBatch, out: &EceOutput, beta: f64) -> Result<EceLoss> {
    let n = batch.history.nrows();
    if n == 0 {
        return Err(KirasError::InvalidArgument("empty ECE batch".into()));
    }
    ensure_dim("velocity target", out.latent.v_hat.ncols(), batch.velocity.ncols())?;
    ensure_dim("next observation", out.reconstruction.ncols(), batch.next_obs.ncols())?;
    let nf = n as f64;
    let mse = |a: &Array2<f64>, b: &ArrayView2<f64>| {
        let w = a.ncols() as f64;
        (a - b).mapv(|x| x * x).sum() / (w * nf)
    };
    let velocity_mse = mse(&out.latent.v_hat, &batch.velocity);
    let reconstruction_mse = mse(&out.reconstruction, &batch.next_obs);
    let kl = (0..n)
        .map(|i| {
            diag_gaussian_kl(
                out.latent.mean.row(i),
                out.latent.log_var.row(i),
                out.prior_mean.row(i),
                out.prior_log_var.row(i),
            )
        })
        .sum::<f64>()
        / nf;
    Ok(EceLoss {
        total: velocity_mse + reconstruction_mse + beta * kl,
        velocity_mse,
        reconstruction_mse,
        kl,
    })
}

pub struct EceGradients {
    pub encoder: Gradients,
    pub decoder: Gradients,
    pub prior: Gradients,
}

fn clamp_mask(raw: ArrayView2<f64>) -> Array2<f64> {
    raw.mapv(|v| if (LOGVAR_MIN..=LOGVAR_MAX).contains(&v) { 1.0 } else { 0.0 })
}

/// Loss and exact gradients for all three networks with the given noise.
pub fn ece_loss_and_grads(nets: &EceNets, batch: &EceBatch, eps: ArrayView2<f64>, beta: f64) -> Result<(EceLoss, EceGradients)> {
    let d = nets.dims;
    let n = batch.history.nrows();
    let out = nets.forward::<rand::rngs::ThreadRng>(batch.history, batch.skills, Sampling::Fixed(eps))?;
    let loss = ece_loss(batch, &out, beta)?;
    let nf = n as f64;

    let (enc_out, enc_cache) = nets.encoder.net.forward_cached(batch.history)?;
    let lv_mask = clamp_mask(enc_out.slice(s![.., d.velocity + d.latent..]));
    let dec_in = concatenate![Axis(1), out.latent.z_lat.view(), batch.skills];
    let (_, dec_cache) = nets.decoder.net.forward_cached(dec_in.view())?;
    let (prior_out, prior_cache) = nets.prior.net.forward_cached(batch.skills)?;
    let plv_mask = clamp_mask(prior_out.slice(s![.., d.latent..]));

    let rw = (d.proprio as f64) * nf;
    let d_recon = (&out.reconstruction - &batch.next_obs).mapv(|x| 2.0 * x / rw);
    let (dec_grads, dec_in_grad) = nets.decoder.net.backward(&dec_cache, d_recon.view())?;
    let dz = dec_in_grad.slice(s![.., ..d.latent]).to_owned();

    let vw = (d.velocity as f64) * nf;
    let dv = (&out.latent.v_hat - &batch.velocity).mapv(|x| 2.0 * x / vw);

    let mq = &out.latent.mean;
    let lq = &out.latent.log_var;
    let mp = &out.prior_mean;
    let lp = &out.prior_log_var;
    let inv_p = lp.mapv(|v| (-v).exp());
    let dm = mq - mp;
    let k = beta / nf;
    let sigma_q = lq.mapv(|v| (0.5 * v).exp());
    let d_mq = &dz + &(&dm * &inv_p * k);
    let d_lq = (&dz * &sigma_q * &eps * 0.5 + &((&lq.mapv(f64::exp) * &inv_p - 1.0) * (0.5 * k))) * &lv_mask;
    let d_mp = &dm * &inv_p * (-k);
    let d_lp = ((1.0 - (lq.mapv(f64::exp) + &dm * &dm) * &inv_p) * (0.5 * k)) * &plv_mask;

    let enc_up = concatenate![Axis(1), dv.view(), d_mq.view(), d_lq.view()];
    let (enc_grads, _) = nets.encoder.net.backward(&enc_cache, enc_up.view())?;
    let prior_up = concatenate![Axis(1), d_mp.view(), d_lp.view()];
    let (prior_grads, _) = nets.prior.net.backward(&prior_cache, prior_up.view())?;
    Ok((
        loss,
        EceGradients {
            encoder: enc_grads,
            decoder: dec_grads,
            prior: prior_grads,
        },
    ))
}

/// One Adam step on every estimator network; returns the pre-step loss.
pub fn ece_update<R: Rng + ?Sized>(
    nets: &mut EceNets,
    batch: &EceBatch,
    beta: f64,
    max_grad_norm: Option<f64>,
    rng: &mut R,
) -> Result<EceLoss> {
    let eps = Array2::from_shape_fn((batch.history.nrows(), nets.dims.latent), |_| rng.sample(StandardNormal));
    let (loss, mut g) = ece_loss_and_grads(nets, batch, eps.view(), beta)?;
    if !loss.total.is_finite() {
        return Err(KirasError::NonFinite("ECE loss".into()));
    }
    nets.encoder.apply(&mut g.encoder, max_grad_norm)?;
    nets.decoder.apply(&mut g.decoder, max_grad_norm)?;
    nets.prior.apply(&mut g.prior, max_grad_norm)?;
    Ok(loss)
}

/// Probability of applying an estimator update this iteration.
pub fn adaboot_gate(batch_mean_reward: f64, running_best: f64) -> f64 {
    (batch_mean_reward / running_best.max(1e-6)).clamp(0.2, 1.0)
}

/// Root-mean-square error of velocity estimates.
pub fn velocity_rmse(v_hat: ArrayView2<f64>, v_true: ArrayView2<f64>) -> f64 {
    let n = v_hat.len().max(1) as f64;
    ((&v_hat - &v_true).mapv(|x| x * x).sum() / n).sqrt()
}

/// Flattens a list of equal-length rows into a matrix.
pub fn rows_to_matrix(rows: &[Vec<f64>], width: usize) -> Result<Array2<f64>> {
    let flat: Vec<f64> = rows.iter().flat_map(|r| r.iter().copied()).collect();
    Array2::from_shape_vec((rows.len(), width), flat).map_err(|e| KirasError::InvalidArgument(format!("ragged rows: {e}")))
}

pub fn row(v: &[f64]) -> Array1<f64> {
    Array1::from(v.to_vec())
}
