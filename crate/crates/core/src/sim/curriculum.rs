use serde::{Deserialize, Serialize};

use super::terrain::MAX_LEVEL;

pub const PROMOTE_RATIO: f64 = 0.8;
pub const DEMOTE_RATIO: f64 = 0.4;

/// How far an episode got relative to what its command asked for.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraversalMetrics {
    pub progress_ratio: f64,
}

impl TraversalMetrics {
    /// Progress along the commanded direction over the commanded distance.
    /// A (near-)zero command counts as full progress.
    pub fn from_distances(travelled_m: f64, commanded_m: f64) -> Self {
        let progress_ratio = if commanded_m.abs() < 1e-6 {
            1.0
        } else {
            travelled_m * commanded_m.signum() / commanded_m.abs()
        };
        Self { progress_ratio }
    }
}

pub fn update_curriculum(level: u8, metrics: &TraversalMetrics) -> u8 {
    let level = level.min(MAX_LEVEL);
    if metrics.progress_ratio >= PROMOTE_RATIO {
        (level + 1).min(MAX_LEVEL)
    } else if metrics.progress_ratio < DEMOTE_RATIO {
        level.saturating_sub(1)
    } else {
        level
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(r: f64) -> TraversalMetrics {
        TraversalMetrics { progress_ratio: r }
    }

    #[test]
    fn clamps_and_steps() {
        assert_eq!(update_curriculum(9, &m(1.0)), 9);
        assert_eq!(update_curriculum(0, &m(0.0)), 0);
        assert_eq!(update_curriculum(3, &m(0.9)), 4);
        assert_eq!(update_curriculum(3, &m(0.5)), 3);
        assert_eq!(update_curriculum(3, &m(0.39)), 2);
    }

    #[test]
    fn deterministic_over_sequences() {
        let seq = [0.9, 0.95, 0.1, 0.6, 0.85, 0.85, 0.2];
        let run = || seq.iter().fold(2u8, |l, &r| update_curriculum(l, &m(r)));
        assert_eq!(run(), run());
        assert_eq!(run(), 4);
    }

    #[test]
    fn ratio_from_distances() {
        assert!((TraversalMetrics::from_distances(2.0, 2.5).progress_ratio - 0.8).abs() < 1e-12);
        assert!((TraversalMetrics::from_distances(-1.0, -2.0).progress_ratio - 0.5).abs() < 1e-12);
        assert!(TraversalMetrics::from_distances(1.0, -2.0).progress_ratio < 0.0);
        assert_eq!(TraversalMetrics::from_distances(0.3, 0.0).progress_ratio, 1.0);
    }
}
