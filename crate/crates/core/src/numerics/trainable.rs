use rand::Rng;

use super::adam::{clip_grad_norm, AdamConfig, AdamState};
use super::net::{DenseNet, Gradients};
use crate::error::{KirasError, Result};

/// A network paired with its optimizer state.
#[derive(Clone, Debug, PartialEq)]
pub struct TrainableNet {
    pub net: DenseNet,
    pub adam: AdamState,
}

impl TrainableNet {
    pub fn new(net: DenseNet, config: AdamConfig) -> Self {
        let adam = AdamState::for_slices(&net.param_slices(), config);
        Self { net, adam }
    }

    pub fn reset_optimizer(&mut self) {
        self.adam = AdamState::for_slices(&self.net.param_slices(), self.adam.config);
    }

    /// Clips (when `max_norm` is given) and applies one Adam step. Returns
    /// the gradient norm before clipping.
    pub fn apply(&mut self, grads: &mut Gradients, max_norm: Option<f64>) -> Result<f64> {
        let norm = match max_norm {
            Some(m) => clip_grad_norm(&mut grads.slices_mut(), m),
            None => grads.flatten().iter().map(|x| x * x).sum::<f64>().sqrt(),
        };
        if !norm.is_finite() {
            return Err(KirasError::NonFinite("gradient".into()));
        }
        self.adam.step(&mut self.net.param_slices_mut(), &grads.slices())?;
        if !self.net.all_finite() {
            return Err(KirasError::NonFinite("network parameters".into()));
        }
        Ok(norm)
    }
}

/// Central finite-difference check of `analytic` against `loss` on
/// `coords` randomly chosen coordinates of `params`. Returns the largest
/// relative error `|fd - a| / max(|fd|, |a|, 1e-6)`.
pub fn gradient_check<F, R>(params: &[f64], analytic: &[f64], mut loss: F, coords: usize, h: f64, rng: &mut R) -> f64
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    assert_eq!(params.len(), analytic.len(), "gradient length");
    let mut work = params.to_vec();
    let mut worst: f64 = 0.0;
    for _ in 0..coords {
        let k = rng.random_range(0..params.len());
        work[k] = params[k] + h;
        let up = loss(&work);
        work[k] = params[k] - h;
        let down = loss(&work);
        work[k] = params[k];
        let fd = (up - down) / (2.0 * h);
        let rel = (fd - analytic[k]).abs() / fd.abs().max(analytic[k].abs()).max(1e-6);
        worst = worst.max(rel);
    }
    worst
}
