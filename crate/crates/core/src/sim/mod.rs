//! Planar quadruped-analog simulator: terrain, dynamics, observations,
//! domain randomization and the terrain curriculum.

pub mod curriculum;
pub mod dynamics;
pub mod observe;
pub mod randomization;
pub mod robot;
pub mod terrain;

pub use curriculum::{update_curriculum, TraversalMetrics};
pub use dynamics::{step, ContactInfo, SimParams, SimState, StepOutcome};
pub use observe::{observe, ObsLayout, ObservationBundle, ProprioHistory};
pub use randomization::{
    sample_command, sample_randomization, Command, DomainRandomization, RandomizationRanges, Range,
};
pub use robot::{Leg, RobotState, NUM_JOINTS};
pub use terrain::{generate_terrain, TerrainMap, TerrainType};
