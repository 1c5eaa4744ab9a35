use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Result};

const STD_FLOOR: f64 = 1e-2;

/// Per-coordinate running mean and variance (Welford) that can be frozen.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunningNorm {
    count: f64,
    mean: Vec<f64>,
    m2: Vec<f64>,
    frozen: bool,
}

impl RunningNorm {
    pub fn new(dim: usize) -> Self {
        Self {
            count: 0.0,
            mean: vec![0.0; dim],
            m2: vec![0.0; dim],
            frozen: false,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    pub fn count(&self) -> f64 {
        self.count
    }

    pub fn is_frozen(&self) -> bool {
        self.frozen
    }

    pub fn freeze(&mut self) {
        self.frozen = true;
    }

    pub fn unfreeze(&mut self) {
        self.frozen = false;
    }

    pub fn mean(&self) -> &[f64] {
        &self.mean
    }

    pub fn std(&self) -> Vec<f64> {
        self.m2
            .iter()
            .map(|m| {
                let var = if self.count > 1.0 { m / self.count } else { 1.0 };
                var.sqrt().max(STD_FLOOR)
            })
            .collect()
    }

    /// Folds `x` into the statistics unless frozen.
    pub fn update(&mut self, x: &[f64]) -> Result<()> {
        ensure_dim("normalizer input", self.dim(), x.len())?;
        if self.frozen {
            return Ok(());
        }
        self.count += 1.0;
        for ((m, s), &v) in self.mean.iter_mut().zip(&mut self.m2).zip(x) {
            let d = v - *m;
            *m += d / self.count;
            *s += d * (v - *m);
        }
        Ok(())
    }

    pub fn normalize(&self, x: &[f64]) -> Vec<f64> {
        let std = self.std();
        x.iter()
            .zip(&self.mean)
            .zip(&std)
            .map(|((v, m), s)| (v - m) / s)
            .collect()
    }

    pub fn normalize_seq(&self, xs: &[Vec<f64>]) -> Vec<Vec<f64>> {
        xs.iter().map(|x| self.normalize(x)).collect()
    }

    /// Adds a coordinate with zero mean and unit variance.
    pub fn insert_dim(&mut self, position: usize) {
        self.mean.insert(position, 0.0);
        self.m2.insert(position, self.count.max(1.0));
    }
}
