use std::path::Path;

use liftpose_core::adversarial::AdversarialConfig;
use liftpose_core::kinematics::{NoiseConfig, SceneConfig};
use liftpose_core::lifting::TrainConfig;
use liftpose_core::triangulation::GateConfig;
use serde::{Deserialize, Serialize};

use crate::failure::{CliError, CliResult};

pub const CONFIG_ENV: &str = "LIFTPOSE_CONFIG";

/// Defaults for every command; flags given on the command line win.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ConfigFile {
    pub scene: Option<SceneConfig>,
    pub noise: Option<NoiseConfig>,
    pub gate: Option<GateConfig>,
    pub ransac_seed: Option<u64>,
    pub train: Option<TrainConfig>,
    pub adversarial: Option<AdversarialConfig>,
}

impl ConfigFile {
    pub fn load(path: Option<&Path>) -> CliResult<Self> {
        let Some(path) = path else {
            return Ok(Self::default());
        };
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| CliError::config(format!("config {}: {e}", path.display())))
    }
}
