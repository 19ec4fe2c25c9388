use std::fmt;

use mimo_tpe_core::Error as CoreError;

/// Pipeline stage an error came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stage {
    Config,
    Geometry,
    Covariance,
    Estimation,
    DetEquiv,
    Optimizer,
    Simulation,
    Output,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            Stage::Config => "config",
            Stage::Geometry => "geometry",
            Stage::Covariance => "covariance",
            Stage::Estimation => "estimation",
            Stage::DetEquiv => "deterministic-equivalent",
            Stage::Optimizer => "optimizer",
            Stage::Simulation => "simulation",
            Stage::Output => "output",
        };
        f.write_str(s)
    }
}

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error("[{stage}] {context}: {source}")]
    Core {
        stage: Stage,
        context: String,
        #[source]
        source: CoreError,
    },
    #[error("[config] {0}")]
    Config(String),
    #[error("[output] {context}: {source}")]
    Io {
        context: String,
        #[source]
        source: std::io::Error,
    },
    #[error("[output] {0}")]
    Csv(#[from] csv::Error),
}

impl SimError {
    pub fn stage(&self) -> Stage {
        match self {
            SimError::Core { stage, .. } => *stage,
            SimError::Config(_) => Stage::Config,
            SimError::Io { .. } | SimError::Csv(_) => Stage::Output,
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;

/// Attaches a stage and a location to core errors.
pub trait StageExt<T> {
    fn at(self, stage: Stage, context: impl FnOnce() -> String) -> Result<T>;
}

impl<T> StageExt<T> for std::result::Result<T, CoreError> {
    fn at(self, stage: Stage, context: impl FnOnce() -> String) -> Result<T> {
        self.map_err(|source| SimError::Core { stage, context: context(), source })
    }
}
