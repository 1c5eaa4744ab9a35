use std::fmt;
use std::io::Write;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{KirasError, Result};

pub const TERRAIN_SPACING: f64 = 0.05;
pub const TERRAIN_START_X: f64 = -3.0;
pub const TERRAIN_LENGTH: f64 = 15.0;
pub const MAX_LEVEL: u8 = 9;
pub const NOISE_AMPLITUDE_MIN: f64 = 0.02;
pub const NOISE_AMPLITUDE_MAX: f64 = 0.07;
/// Obstacles begin past this x so every episode starts on level ground.
const OBSTACLE_START_X: f64 = 0.6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TerrainType {
    Flat,
    Slope,
    Bars,
    DiscreteFootholds,
    Stairs,
}

impl TerrainType {
    pub const ALL: [TerrainType; 5] = [
        TerrainType::Flat,
        TerrainType::Slope,
        TerrainType::Bars,
        TerrainType::DiscreteFootholds,
        TerrainType::Stairs,
    ];

    pub fn is_rough(self) -> bool {
        self != TerrainType::Flat
    }

    pub fn index(self) -> usize {
        Self::ALL.iter().position(|&t| t == self).expect("listed")
    }

    pub fn name(self) -> &'static str {
        match self {
            TerrainType::Flat => "flat",
            TerrainType::Slope => "slope",
            TerrainType::Bars => "bars",
            TerrainType::DiscreteFootholds => "discrete_footholds",
            TerrainType::Stairs => "stairs",
        }
    }
}

impl fmt::Display for TerrainType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TerrainType {
    type Err = KirasError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().replace('-', "_").as_str() {
            "flat" => Ok(TerrainType::Flat),
            "slope" | "slopes" => Ok(TerrainType::Slope),
            "bars" | "bar" => Ok(TerrainType::Bars),
            "discrete_footholds" | "discrete" | "footholds" => Ok(TerrainType::DiscreteFootholds),
            "stairs" | "stair" => Ok(TerrainType::Stairs),
            _ => Err(KirasError::Unknown {
                kind: "terrain type",
                name: s.to_string(),
            }),
        }
    }
}

/// Uniformly sampled 1-D height profile.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TerrainMap {
    pub height_samples: Vec<f64>,
    pub spacing: f64,
    pub origin_x: f64,
    pub terrain_type: TerrainType,
    pub difficulty_level: u8,
    pub noise_amplitude: f64,
}

impl TerrainMap {
    pub fn flat() -> Self {
        let n = (TERRAIN_LENGTH / TERRAIN_SPACING).round() as usize + 1;
        Self {
            height_samples: vec![0.0; n],
            spacing: TERRAIN_SPACING,
            origin_x: TERRAIN_START_X,
            terrain_type: TerrainType::Flat,
            difficulty_level: 0,
            noise_amplitude: 0.0,
        }
    }

    pub fn x_at(&self, i: usize) -> f64 {
        self.origin_x + i as f64 * self.spacing
    }

    fn locate(&self, x: f64) -> (usize, f64) {
        let n = self.height_samples.len();
        let u = ((x - self.origin_x) / self.spacing).clamp(0.0, (n - 1) as f64);
        let i = (u.floor() as usize).min(n - 2);
        (i, u - i as f64)
    }

    /// Linearly interpolated height; clamped to the edge values outside the map.
    pub fn height_at(&self, x: f64) -> f64 {
        let (i, t) = self.locate(x);
        let h = &self.height_samples;
        h[i] + (h[i + 1] - h[i]) * t
    }

    /// Slope of the interpolant at `x` (zero outside the map).
    pub fn slope_at(&self, x: f64) -> f64 {
        let end = self.origin_x + (self.height_samples.len() - 1) as f64 * self.spacing;
        if x < self.origin_x || x > end {
            return 0.0;
        }
        let (i, _) = self.locate(x);
        (self.height_samples[i + 1] - self.height_samples[i]) / self.spacing
    }

    /// Writes `x,height` rows with a header.
    pub fn write_csv<W: Write>(&self, out: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(["x", "height"])?;
        for (i, h) in self.height_samples.iter().enumerate() {
            w.write_record([self.x_at(i).to_string(), h.to_string()])?;
        }
        w.flush()?;
        Ok(())
    }
}

/// Characteristic obstacle dimension for a type and level: slope angle in
/// radians, bar height, gap width or step rise in meters.
pub fn obstacle_scale(terrain: TerrainType, level: u8) -> f64 {
    let d = level as f64 / MAX_LEVEL as f64;
    match terrain {
        TerrainType::Flat => 0.0,
        TerrainType::Slope => (3.0 + 22.0 * d).to_radians(),
        TerrainType::Bars => 0.02 + 0.08 * d,
        TerrainType::DiscreteFootholds => 0.02 + 0.13 * d,
        TerrainType::Stairs => 0.02 + 0.08 * d,
    }
}

pub fn noise_amplitude(terrain: TerrainType, level: u8) -> f64 {
    if terrain.is_rough() {
        let d = level as f64 / MAX_LEVEL as f64;
        NOISE_AMPLITUDE_MIN + (NOISE_AMPLITUDE_MAX - NOISE_AMPLITUDE_MIN) * d
    } else {
        0.0
    }
}

pub fn generate_terrain(terrain: TerrainType, level: u8, seed: u64) -> Result<TerrainMap> {
    if level > MAX_LEVEL {
        return Err(KirasError::InvalidArgument(format!(
            "difficulty level {level} outside 0..={MAX_LEVEL}"
        )));
    }
    let mut map = TerrainMap::flat();
    map.terrain_type = terrain;
    map.difficulty_level = level;
    map.noise_amplitude = noise_amplitude(terrain, level);
    if terrain == TerrainType::Flat {
        return Ok(map);
    }
    let scale = obstacle_scale(terrain, level);
    let xs: Vec<f64> = (0..map.height_samples.len()).map(|i| map.x_at(i)).collect();
    for (h, &x) in map.height_samples.iter_mut().zip(&xs) {
        let u = x - OBSTACLE_START_X;
        if u < 0.0 {
            continue;
        }
        *h = match terrain {
            TerrainType::Flat => 0.0,
            TerrainType::Slope => {
                // Repeating hill: 2 m up, 2 m down.
                let period = 4.0;
                let p = u % period;
                let along = if p < period / 2.0 { p } else { period - p };
                along * scale.tan()
            }
            TerrainType::Bars => {
                let p = u % 0.8;
                if p < 0.1 {
                    scale
                } else {
                    0.0
                }
            }
            TerrainType::DiscreteFootholds => {
                let stone = 0.35;
                let p = u % (stone + scale);
                if p < stone {
                    0.0
                } else {
                    -0.2
                }
            }
            TerrainType::Stairs => {
                // Eight steps up, eight down.
                let run = 0.3;
                let k = (u / run).floor() as i64 % 16;
                let steps = if k < 8 { k + 1 } else { 16 - k - 1 };
                steps as f64 * scale
            }
        };
    }
    let noise = fractal_noise(xs.len(), seed);
    for (h, n) in map.height_samples.iter_mut().zip(noise) {
        *h += 0.5 * map.noise_amplitude * n;
    }
    Ok(map)
}

/// Sum of value-noise octaves normalised to `[-1, 1]`.
fn fractal_noise(n: usize, seed: u64) -> Vec<f64> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let octaves = 4;
    let base_cells = 0.4 / TERRAIN_SPACING;
    let mut out = vec![0.0; n];
    let mut amp = 1.0;
    let mut cells = base_cells;
    for _ in 0..octaves {
        let lattice_len = (n as f64 / cells).ceil() as usize + 2;
        let lattice: Vec<f64> = (0..lattice_len).map(|_| rng.random_range(-1.0..1.0)).collect();
        for (i, o) in out.iter_mut().enumerate() {
            let u = i as f64 / cells;
            let k = u.floor() as usize;
            let t = u - k as f64;
            let s = 0.5 - 0.5 * (t * std::f64::consts::PI).cos();
            *o += amp * (lattice[k] * (1.0 - s) + lattice[k + 1] * s);
        }
        amp *= 0.5;
        cells = (cells / 2.0).max(1.0);
    }
    let peak = out.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if peak > 0.0 {
        out.iter_mut().for_each(|v| *v /= peak);
    }
    out
}
