use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::Rng;

use crate::error::{ensure_dim, KirasError, Result};
use crate::numerics::{Activation, AdamConfig, DenseNet, Gradients, TrainableNet};

/// LS-GAN critic on consecutive imitation-frame pairs.
#[derive(Clone, Debug, PartialEq)]
pub struct Discriminator {
    pub model: TrainableNet,
}

pub fn pair_input(prev: &[f64], cur: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(prev.len() + cur.len());
    v.extend_from_slice(prev);
    v.extend_from_slice(cur);
    v
}

impl Discriminator {
    pub fn new<R: Rng + ?Sized>(frame_dim: usize, hidden: &[usize], adam: AdamConfig, rng: &mut R) -> Result<Self> {
        let mut dims = vec![2 * frame_dim];
        dims.extend_from_slice(hidden);
        dims.push(1);
        let net = DenseNet::new(&dims, Activation::Elu, Activation::Linear, 1.0, rng)?;
        Ok(Self {
            model: TrainableNet::new(net, adam),
        })
    }

    pub fn frame_dim(&self) -> usize {
        self.model.net.input_dim() / 2
    }

    pub fn score(&self, prev: &[f64], cur: &[f64]) -> Result<f64> {
        let x = Array1::from(pair_input(prev, cur));
        Ok(self.model.net.forward(x.view())?[0])
    }

    /// Scores for a batch of concatenated pairs, one per row.
    pub fn scores(&self, pairs: ArrayView2<f64>) -> Result<Array1<f64>> {
        Ok(self.model.net.forward_batch(pairs)?.column(0).to_owned())
    }
}

/// `mean_real (D-1)^2 + mean_fake (D+1)^2` and its parameter gradient.
pub fn ls_gan_loss(net: &DenseNet, real: ArrayView2<f64>, fake: ArrayView2<f64>) -> Result<(f64, Gradients)> {
    if real.nrows() == 0 || fake.nrows() == 0 {
        return Err(KirasError::InvalidArgument("discriminator batches must be non-empty".into()));
    }
    ensure_dim("discriminator output", 1, net.output_dim())?;
    let mut loss = 0.0;
    let mut grads = Gradients::zeros_like(net);
    for (batch, target) in [(real, 1.0), (fake, -1.0)] {
        let n = batch.nrows() as f64;
        let (out, cache) = net.forward_cached(batch)?;
        loss += out.iter().map(|d| (d - target) * (d - target)).sum::<f64>() / n;
        let upstream: Array2<f64> = out.mapv(|d| 2.0 * (d - target) / n);
        let (g, _) = net.backward(&cache, upstream.view())?;
        grads.add_assign(&g);
    }
    Ok((loss, grads))
}

/// One Adam step on the LS-GAN objective; returns the loss before the step.
pub fn discriminator_update(
    d: &mut Discriminator,
    real: ArrayView2<f64>,
    fake: ArrayView2<f64>,
    max_grad_norm: Option<f64>,
) -> Result<f64> {
    let (loss, mut grads) = ls_gan_loss(&d.model.net, real, fake)?;
    if !loss.is_finite() {
        return Err(KirasError::NonFinite("discriminator loss".into()));
    }
    d.model.apply(&mut grads, max_grad_norm)?;
    Ok(loss)
}

pub fn sil_reward_from_score(score: f64) -> f64 {
    (1.0 - 0.25 * (score - 1.0) * (score - 1.0)).max(0.0)
}

pub fn sil_reward(d: &Discriminator, prev: &[f64], cur: &[f64]) -> Result<f64> {
    Ok(sil_reward_from_score(d.score(prev, cur)?))
}

/// Rows of concatenated pairs as a matrix.
pub fn pairs_matrix(pairs: &[Vec<f64>]) -> Result<Array2<f64>> {
    let width = pairs.first().map_or(0, |p| p.len());
    let flat: Vec<f64> = pairs.iter().flat_map(|p| p.iter().copied()).collect();
    Array2::from_shape_vec((pairs.len(), width), flat)
        .map_err(|e| KirasError::InvalidArgument(format!("ragged pair batch: {e}")))
}

/// Mean score over rows, handy for logging.
pub fn mean_score(d: &Discriminator, pairs: ArrayView2<f64>) -> Result<f64> {
    Ok(d.scores(pairs)?.mean_axis(Axis(0)).map_or(0.0, |m| m[()]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{gradient_check, Layer};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn constant_net(value: f64) -> DenseNet {
        DenseNet::from_layers(vec![Layer {
            weight: Array2::zeros((1, 2)),
            bias: array![value],
            activation: Activation::Linear,
        }])
        .unwrap()
    }

    #[test]
    fn loss_closed_forms() {
        let real = array![[0.0, 1.0], [1.0, 0.0]];
        let fake = array![[2.0, 2.0]];
        let (l0, _) = ls_gan_loss(&constant_net(0.0), real.view(), fake.view()).unwrap();
        assert_eq!(l0, 2.0);
        let perfect = DenseNet::from_layers(vec![Layer {
            weight: array![[1.0, 1.0]],
            bias: array![-3.0],
            activation: Activation::Linear,
        }])
        .unwrap();
        let real = array![[2.0, 2.0]];
        let fake = array![[1.0, 1.0]];
        let (l, _) = ls_gan_loss(&perfect, real.view(), fake.view()).unwrap();
        assert_eq!(l, 0.0);
    }

    #[test]
    fn sil_reward_values() {
        assert_eq!(sil_reward_from_score(1.0), 1.0);
        assert_eq!(sil_reward_from_score(-1.0), 0.0);
        assert_eq!(sil_reward_from_score(3.0), 0.0);
        assert!((sil_reward_from_score(0.0) - 0.75).abs() < 1e-15);
    }

    #[test]
    fn loss_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let d = Discriminator::new(3, &[16, 8], AdamConfig::default(), &mut rng).unwrap();
        let real = Array2::from_shape_fn((5, 6), |(i, j)| ((i * 7 + j) as f64 * 0.37).sin());
        let fake = Array2::from_shape_fn((4, 6), |(i, j)| ((i * 5 + j) as f64 * 0.61).cos());
        let (_, g) = ls_gan_loss(&d.model.net, real.view(), fake.view()).unwrap();
        let params = d.model.net.flat_params();
        let mut probe = d.model.net.clone();
        let err = gradient_check(
            &params,
            &g.flatten(),
            |p| {
                probe.set_flat_params(p).unwrap();
                ls_gan_loss(&probe, real.view(), fake.view()).unwrap().0
            },
            64,
            1e-5,
            &mut rng,
        );
        assert!(err < 1e-4, "relative error {err}");
    }

    #[test]
    fn separates_two_clusters() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let mut d = Discriminator::new(2, &[32, 32], AdamConfig::default(), &mut rng).unwrap();
        let real = Array2::from_shape_fn((32, 4), |(i, _)| 1.0 + 0.1 * ((i as f64) * 0.9).sin());
        let fake = Array2::from_shape_fn((32, 4), |(i, _)| -1.0 + 0.1 * ((i as f64) * 1.3).cos());
        let first = discriminator_update(&mut d, real.view(), fake.view(), None).unwrap();
        let mut last = first;
        for _ in 0..499 {
            last = discriminator_update(&mut d, real.view(), fake.view(), None).unwrap();
        }
        assert!(last < 0.1 * first, "{first} -> {last}");
    }
}
