use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KirasError, Result};

/// Physical properties drawn per episode.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct DomainRandomization {
    pub friction_coeff: f64,
    pub payload_kg: f64,
    /// Center-of-mass offset along the body axis, meters.
    pub com_shift: f64,
    pub push_velocity: f64,
    pub push_interval_s: f64,
    pub actuation_delay_s: f64,
    pub pd_stiffness_mult: f64,
    pub pd_damping_mult: f64,
}

impl DomainRandomization {
    pub fn nominal() -> Self {
        Self {
            friction_coeff: 1.0,
            payload_kg: 0.0,
            com_shift: 0.0,
            push_velocity: 0.0,
            push_interval_s: 5.0,
            actuation_delay_s: 0.0,
            pd_stiffness_mult: 1.0,
            pd_damping_mult: 1.0,
        }
    }
}

impl Default for DomainRandomization {
    fn default() -> Self {
        Self::nominal()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Range {
    pub lo: f64,
    pub hi: f64,
}

impl Range {
    pub const fn new(lo: f64, hi: f64) -> Self {
        Self { lo, hi }
    }

    pub fn point(v: f64) -> Self {
        Self { lo: v, hi: v }
    }

    pub fn contains(&self, v: f64) -> bool {
        (self.lo..=self.hi).contains(&v)
    }

    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        if self.hi > self.lo {
            rng.random_range(self.lo..=self.hi)
        } else {
            self.lo
        }
    }

    fn validate(&self, name: &str) -> Result<()> {
        if !(self.lo.is_finite() && self.hi.is_finite()) || self.lo > self.hi {
            return Err(KirasError::Config(format!(
                "range {name} = [{}, {}] is invalid",
                self.lo, self.hi
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RandomizationRanges {
    pub friction_coeff: Range,
    pub payload_kg: Range,
    pub com_shift: Range,
    pub push_velocity: Range,
    pub push_interval_s: f64,
    pub actuation_delay_s: Range,
    pub pd_stiffness_mult: Range,
    pub pd_damping_mult: Range,
}

impl Default for RandomizationRanges {
    fn default() -> Self {
        Self {
            friction_coeff: Range::new(0.5, 1.25),
            payload_kg: Range::new(-0.5, 0.25),
            com_shift: Range::new(-0.02, 0.05),
            push_velocity: Range::new(-0.1, 0.1),
            push_interval_s: 5.0,
            actuation_delay_s: Range::new(0.0, 0.015),
            pd_stiffness_mult: Range::new(0.8, 1.2),
            pd_damping_mult: Range::new(0.8, 1.2),
        }
    }
}

impl RandomizationRanges {
    /// Every range collapsed onto the nominal value.
    pub fn disabled() -> Self {
        let n = DomainRandomization::nominal();
        Self {
            friction_coeff: Range::point(n.friction_coeff),
            payload_kg: Range::point(n.payload_kg),
            com_shift: Range::point(n.com_shift),
            push_velocity: Range::point(n.push_velocity),
            push_interval_s: n.push_interval_s,
            actuation_delay_s: Range::point(n.actuation_delay_s),
            pd_stiffness_mult: Range::point(n.pd_stiffness_mult),
            pd_damping_mult: Range::point(n.pd_damping_mult),
        }
    }

    pub fn validate(&self) -> Result<()> {
        self.friction_coeff.validate("friction_coeff")?;
        self.payload_kg.validate("payload_kg")?;
        self.com_shift.validate("com_shift")?;
        self.push_velocity.validate("push_velocity")?;
        self.actuation_delay_s.validate("actuation_delay_s")?;
        self.pd_stiffness_mult.validate("pd_stiffness_mult")?;
        self.pd_damping_mult.validate("pd_damping_mult")?;
        if !(self.push_interval_s > 0.0) {
            return Err(KirasError::Config("push_interval_s must be positive".into()));
        }
        if self.payload_kg.lo <= -crate::sim::robot::BASE_MASS {
            return Err(KirasError::Config("payload would make the base massless".into()));
        }
        Ok(())
    }
}

pub fn sample_randomization<R: Rng + ?Sized>(ranges: &RandomizationRanges, rng: &mut R) -> DomainRandomization {
    DomainRandomization {
        friction_coeff: ranges.friction_coeff.sample(rng),
        payload_kg: ranges.payload_kg.sample(rng),
        com_shift: ranges.com_shift.sample(rng),
        push_velocity: ranges.push_velocity.sample(rng),
        push_interval_s: ranges.push_interval_s,
        actuation_delay_s: ranges.actuation_delay_s.sample(rng),
        pd_stiffness_mult: ranges.pd_stiffness_mult.sample(rng),
        pd_damping_mult: ranges.pd_damping_mult.sample(rng),
    }
}

/// Forward velocity command for the planar robot.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct Command {
    pub target_vx: f64,
}

pub const DEFAULT_COMMAND_RANGE: Range = Range::new(-0.6, 1.0);

pub fn sample_command<R: Rng + ?Sized>(range: &Range, rng: &mut R) -> Command {
    Command {
        target_vx: range.sample(rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_stay_in_table_ranges() {
        let ranges = RandomizationRanges::default();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut lo = [f64::MAX; 7];
        let mut hi = [f64::MIN; 7];
        for _ in 0..10_000 {
            let d = sample_randomization(&ranges, &mut rng);
            let v = [
                d.friction_coeff,
                d.payload_kg,
                d.com_shift,
                d.push_velocity,
                d.actuation_delay_s,
                d.pd_stiffness_mult,
                d.pd_damping_mult,
            ];
            for i in 0..7 {
                lo[i] = lo[i].min(v[i]);
                hi[i] = hi[i].max(v[i]);
            }
            assert_eq!(d.push_interval_s, 5.0);
        }
        let want = [
            (0.5, 1.25),
            (-0.5, 0.25),
            (-0.02, 0.05),
            (-0.1, 0.1),
            (0.0, 0.015),
            (0.8, 1.2),
            (0.8, 1.2),
        ];
        for i in 0..7 {
            assert!(lo[i] >= want[i].0 && hi[i] <= want[i].1, "field {i}: [{}, {}]", lo[i], hi[i]);
        }
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for _ in 0..10_000 {
            let c = sample_command(&DEFAULT_COMMAND_RANGE, &mut rng);
            assert!(DEFAULT_COMMAND_RANGE.contains(c.target_vx));
        }
    }

    #[test]
    fn seeded_draws_reproduce() {
        let ranges = RandomizationRanges::default();
        let a = sample_randomization(&ranges, &mut ChaCha8Rng::seed_from_u64(5));
        let b = sample_randomization(&ranges, &mut ChaCha8Rng::seed_from_u64(5));
        assert_eq!(a, b);
    }

    #[test]
    fn collapsed_ranges_are_constant() {
        let ranges = RandomizationRanges::disabled();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        for _ in 0..100 {
            assert_eq!(sample_randomization(&ranges, &mut rng), DomainRandomization::nominal());
        }
        let c = sample_command(&Range::point(0.4), &mut rng);
        assert_eq!(c.target_vx, 0.4);
    }
}
