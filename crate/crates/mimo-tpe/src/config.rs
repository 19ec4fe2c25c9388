//! Run configuration: a TOML document with a `[scenario]` table holding every
//! `ScenarioConfig` field by name and an `[experiment]` table for sweeps.
//!
//! ```toml
//! [scenario]
//! L = 3
//! K = 40
//! M = 160
//! P = 1.0          # scalars are broadcast to every cell
//! J = 5
//! phi = 0.1
//! rho_tr = 31.62
//!
//! [experiment]
//! orders = [1, 2, 3, 5]
//! coefficients = "optimized"
//! ```

use std::path::Path;

use mimo_tpe_core::scenario::ScenarioConfig;
use serde::{Deserialize, Deserializer, Serialize};

use crate::error::{Result, SimError, Stage, StageExt};

/// How TPE coefficients are chosen for each drop.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoefficientMode {
    /// Weighted max-min optimization with RZF-mimicking weights.
    Optimized,
    /// Truncated Taylor series of the RZF inverse.
    Taylor,
}

/// RZF regularization used by a run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhiRule {
    /// `phi` from the scenario table.
    Fixed,
    /// `φ = Mσ²/K`.
    NoiseScaled,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    /// TPE orders evaluated at every sweep point.
    pub orders: Vec<usize>,
    pub coefficients: CoefficientMode,
    pub phi_rule: PhiRule,
    pub include_mrt: bool,
    /// Bisection tolerance in bit/s/Hz.
    pub epsilon: f64,
    pub m_values: Vec<usize>,
    pub phi_values: Vec<f64>,
    pub rho_tr_db: Vec<f64>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            orders: vec![1, 2, 3, 4, 5],
            coefficients: CoefficientMode::Optimized,
            phi_rule: PhiRule::Fixed,
            include_mrt: true,
            epsilon: 1e-3,
            m_values: vec![80, 120, 160, 200, 240],
            phi_values: vec![0.01, 0.03, 0.1, 0.3, 1.0, 3.0],
            rho_tr_db: vec![0.0, 5.0, 10.0, 15.0, 20.0],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    #[serde(deserialize_with = "scenario_broadcast")]
    pub scenario: ScenarioConfig,
    pub experiment: ExperimentConfig,
}

/// Accepts `P`, `J` and `phi` either as lists or as a scalar for every cell.
fn scenario_broadcast<'de, D: Deserializer<'de>>(d: D) -> std::result::Result<ScenarioConfig, D::Error> {
    let mut table = toml::Table::deserialize(d)?;
    for key in ["P", "J", "phi"] {
        if let Some(v) = table.get_mut(key) {
            if !v.is_array() {
                *v = toml::Value::Array(vec![v.clone()]);
            }
        }
    }
    let config: ScenarioConfig = toml::Value::Table(table).try_into().map_err(serde::de::Error::custom)?;
    Ok(config.broadcast())
}

/// Preset sample sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum Profile {
    /// One drop, ten trials: checks plumbing in seconds.
    Smoke,
    /// Ten drops of 500 trials.
    Full,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        let config: RunConfig = toml::from_str(text).map_err(|e| SimError::Config(e.to_string()))?;
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| SimError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    pub fn apply_profile(&mut self, profile: Profile) {
        let (drops, trials) = match profile {
            Profile::Smoke => (1, 10),
            Profile::Full => (10, 500),
        };
        self.scenario.n_drops = drops;
        self.scenario.n_trials = trials;
    }

    pub fn validate(&self) -> Result<()> {
        self.scenario.validate().at(Stage::Config, || "scenario".into())?;
        let e = &self.experiment;
        if e.orders.is_empty() || e.orders.contains(&0) {
            return Err(SimError::Config(format!("TPE orders must be >= 1, got {:?}", e.orders)));
        }
        if !(e.epsilon > 0.0) {
            return Err(SimError::Config(format!("epsilon must be positive, got {}", e.epsilon)));
        }
        if self.scenario.n_trials < 2 || self.scenario.n_drops == 0 {
            return Err(SimError::Config("need at least 2 trials and 1 drop".into()));
        }
        Ok(())
    }
}
