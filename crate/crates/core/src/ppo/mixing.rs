use serde::{Deserialize, Serialize};

use crate::error::{ensure_dim, Result};

pub const STD_FLOOR: f64 = 1e-8;

/// Linear ramp of the task weight from `1 - sigma` at `t = 0` to 1 at
/// `t = t1`, then constant 1. Returns `(omega_task, omega_imitation)`.
pub fn omega_schedule(t: u64, t1: u64, sigma: f64) -> (f64, f64) {
    let w1 = if t >= t1 {
        1.0
    } else {
        ((1.0 - sigma) + sigma * t as f64 / t1 as f64).clamp(0.0, 1.0)
    };
    (w1, 1.0 - w1)
}

/// `(x - mean) / std` with population statistics. A stream whose standard
/// deviation is below the floor maps to zeros.
pub fn normalize(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let std = var.sqrt();
    if std < STD_FLOOR {
        return vec![0.0; x.len()];
    }
    x.iter().map(|v| (v - mean) / std).collect()
}

/// Per-transition advantage streams and their mixture.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdvantagePair {
    pub task: Vec<f64>,
    pub imitation: Vec<f64>,
    pub omega_task: f64,
    pub omega_imitation: f64,
    pub mixed: Vec<f64>,
}

/// Normalizes each stream over the batch and mixes them.
pub fn mix_advantages(task: &[f64], imitation: &[f64], omega_task: f64, omega_imitation: f64) -> Result<AdvantagePair> {
    ensure_dim("advantage streams", task.len(), imitation.len())?;
    let nt = normalize(task);
    let ni = normalize(imitation);
    let mixed = if omega_imitation == 0.0 && omega_task == 1.0 {
        nt.clone()
    } else if omega_task == 0.0 && omega_imitation == 1.0 {
        ni.clone()
    } else {
        nt.iter().zip(&ni).map(|(a, b)| omega_task * a + omega_imitation * b).collect()
    };
    Ok(AdvantagePair {
        task: nt,
        imitation: ni,
        omega_task,
        omega_imitation,
        mixed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn schedule_points() {
        assert_eq!(omega_schedule(100, 100, 0.8), (1.0, 0.0));
        let (w1, w2) = omega_schedule(0, 100, 0.8);
        assert!((w1 - 0.2).abs() < 1e-15);
        assert!((w1 + w2 - 1.0).abs() < 1e-15);
        for t in 0..300 {
            let (a, b) = omega_schedule(t, 200, 0.8);
            assert!((0.0..=1.0).contains(&a) && (a + b - 1.0).abs() < 1e-15);
        }
        assert_eq!(omega_schedule(0, 0, 0.8), (1.0, 0.0));
    }

    #[test]
    fn degenerate_mix_and_constant_stream() {
        let t = [1.0, -2.0, 0.5, 3.0];
        let i = [9.0, 1.0, -4.0, 0.0];
        let m = mix_advantages(&t, &i, 1.0, 0.0).unwrap();
        assert_eq!(m.mixed, normalize(&t));
        let c = mix_advantages(&[0.7; 4], &i, 0.5, 0.5).unwrap();
        assert!(c.task.iter().all(|&x| x == 0.0));
    }

    #[test]
    fn affine_invariance() {
        let t = [1.0, -2.0, 0.5, 3.0, 0.25];
        let i = [9.0, 1.0, -4.0, 0.0, 2.0];
        let shifted: Vec<f64> = i.iter().map(|x| 3.7 * x - 11.0).collect();
        let a = mix_advantages(&t, &i, 0.4, 0.6).unwrap();
        let b = mix_advantages(&t, &shifted, 0.4, 0.6).unwrap();
        for (x, y) in a.mixed.iter().zip(&b.mixed) {
            assert!((x - y).abs() < 1e-9);
        }
        let n = normalize(&t);
        let mean: f64 = n.iter().sum::<f64>() / 5.0;
        let std = (n.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / 5.0).sqrt();
        assert!(mean.abs() < 1e-6 && (std - 1.0).abs() < 1e-6);
    }
}
