use thiserror::Error;

#[derive(Debug, Error)]
pub enum KirasError {
    #[error("dimension mismatch in {context}: expected {expected}, got {got}")]
    DimensionMismatch {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("backward called without a matching forward cache: {0}")]
    NotCached(&'static str),

    #[error("non-finite value encountered in {0}")]
    NonFinite(String),

    #[error("simulation diverged at t={time:.3}s")]
    SimulationDiverged { time: f64 },

    #[error("posture out of leg workspace: {0}")]
    OutOfWorkspace(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("unknown {kind} '{name}'")]
    Unknown { kind: &'static str, name: String },

    #[error("invalid config: {0}")]
    Config(String),

    #[error("checkpoint: {0}")]
    Checkpoint(String),

    #[error("incompatible checkpoint version {found} (supported: {supported})")]
    CheckpointVersion { found: u32, supported: u32 },

    #[error("script line {line}: {msg}")]
    Script { line: usize, msg: String },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Toml(#[from] toml::de::Error),
}

impl KirasError {
    /// Stable snake_case name of the variant, for machine-readable reports.
    pub fn kind(&self) -> &'static str {
        match self {
            KirasError::DimensionMismatch { .. } => "dimension_mismatch",
            KirasError::NotCached(_) => "not_cached",
            KirasError::NonFinite(_) => "non_finite",
            KirasError::SimulationDiverged { .. } => "simulation_diverged",
            KirasError::OutOfWorkspace(_) => "out_of_workspace",
            KirasError::InvalidArgument(_) => "invalid_argument",
            KirasError::Unknown { .. } => "unknown_name",
            KirasError::Config(_) => "config",
            KirasError::Checkpoint(_) => "checkpoint",
            KirasError::CheckpointVersion { .. } => "checkpoint_version",
            KirasError::Script { .. } => "script",
            KirasError::Io(_) => "io",
            KirasError::Csv(_) => "csv",
            KirasError::Json(_) => "json",
            KirasError::Toml(_) => "toml",
        }
    }
}

pub type Result<T> = std::result::Result<T, KirasError>;

pub(crate) fn ensure_dim(context: &'static str, expected: usize, got: usize) -> Result<()> {
    if expected == got {
        Ok(())
    } else {
        Err(KirasError::DimensionMismatch {
            context,
            expected,
            got,
        })
    }
}
